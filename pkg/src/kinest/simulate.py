"""Path simulation for position-velocity SDEs and the exact free-model sampler.

The Euler scheme advances the velocity with drift and noise and the position
with the degenerate update X_{k+1} = X_k + Y_k dt (no noise enters X); an
optional trapezoidal position update X_{k+1} = X_k + (Y_k + Y_{k+1}) dt / 2
matches the conditional mean of the exact free transition.

Randomness is counter-based (Philox) with keys derived from (seed, stream) by
SHA-256, so distinct replications and substreams are independent by key
separation and every run is reproducible from its integer seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _fast
from .models import ModelSpec

__all__ = [
    "Trajectory",
    "SimulationError",
    "philox_rng",
    "simulate_em",
    "simulate_free_exact",
    "free_exact_batch",
    "stationary_start",
    "save_trajectory",
    "load_trajectory",
    "trajectory_to_csv",
]

CHUNK_STEPS = 4_000_000


class SimulationError(RuntimeError):
    """Raised when a simulated path leaves the finite range (explosion)."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state first detected at step {step}")


@dataclass
class Trajectory:
    """Uniformly sampled path: X and Y hold n_steps + 1 rows (both endpoints).

    The recorded horizon is T = n_steps * dt; estimators consume the left
    endpoints k = 0..n_steps-1 and velocity increments Y[k+1] - Y[k].
    """

    dt: float
    n_steps: int
    X: np.ndarray
    Y: np.ndarray
    seed: int
    model_id: str
    burn_in: float = 0.0

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __post_init__(self) -> None:
        if self.X.shape != self.Y.shape or self.X.shape[0] != self.n_steps + 1:
            raise ValueError(
                f"state blocks must be (n_steps + 1, d); got X{self.X.shape}, Y{self.Y.shape}"
            )


def philox_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by SHA-256(seed, stream); independent across streams."""
    digest = hashlib.sha256(f"kinest:{int(seed)}:{int(stream)}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _steps_for(T: float, dt: float) -> int:
    if dt <= 0 or T <= 0:
        raise ValueError(f"T and dt must be positive, got T={T}, dt={dt}")
    n = T / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ValueError(f"T/dt must be integral, got {n}")
    return int(round(n))


def simulate_em(
    model: ModelSpec,
    z0,
    T: float,
    dt: float,
    seed: int,
    position: str = "euler",
    burn_in: float = 0.0,
) -> Trajectory:
    """Euler path of the model from z0 = (x0, y0) over [0, T]; reproducible from seed.

    Raises :class:`SimulationError` with the first offending step index if the
    state becomes non-finite.  ``position`` selects the degenerate update
    ('euler') or the trapezoidal variant ('trapezoid').
    """
    if dt > model.dt_max:
        raise ValueError(f"dt={dt} exceeds dt_max={model.dt_max} for {model.model_id}")
    if position not in ("euler", "trapezoid"):
        raise ValueError(f"position scheme must be 'euler' or 'trapezoid', got {position!r}")
    n = _steps_for(T, dt)
    d = model.d
    z0 = np.asarray(z0, dtype=float).ravel()
    if z0.size != 2 * d:
        raise ValueError(f"z0 must have dimension 2d = {2 * d}, got {z0.size}")
    X = np.empty((n + 1, d))
    Y = np.empty((n + 1, d))
    X[0] = z0[:d]
    Y[0] = z0[d:]
    rng = philox_rng(seed)
    trap = position == "trapezoid"
    if d == 1 and model.fast_code is not None:
        gamma, spring, sigma = model.fast_params
        x, y = float(X[0, 0]), float(Y[0, 0])
        done = 0
        while done < n:
            c = min(CHUNK_STEPS, n - done)
            x, y, bad = _fast.em_chunk_d1(
                model.fast_code, gamma, spring, sigma, x, y, dt, rng,
                X[1 + done : 1 + done + c, 0], Y[1 + done : 1 + done + c, 0], trap,
            )
            if bad >= 0:
                raise SimulationError(done + bad + 1)
            done += c
    else:
        x = X[0].copy()
        y = Y[0].copy()
        sdt = math.sqrt(dt)
        for k in range(n):
            b = -(model.damping(x, y) @ y + model.grad_potential(x))
            noise = model.diffusion(x, y) @ rng.standard_normal(d)
            yn = y + b * dt + sdt * noise
            x = x + (0.5 * (y + yn) if trap else y) * dt
            y = yn
            X[k + 1] = x
            Y[k + 1] = y
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                raise SimulationError(k + 1)
    return Trajectory(
        dt=dt, n_steps=n, X=X, Y=Y, seed=int(seed), model_id=model.model_id, burn_in=burn_in
    )


def simulate_free_exact(z0, T: float, dt: float, sigma0: float, seed: int) -> Trajectory:
    """Exact transition sampling of the free model (c = V = 0), per axis.

    Each step draws (dX, dY) from the exact joint Gaussian with conditional
    mean (y dt, 0) and covariance sigma0^2 [[dt^3/3, dt^2/2], [dt^2/2, dt]].
    """
    if sigma0 <= 0:
        raise ValueError(f"sigma0 must be positive, got {sigma0}")
    n = _steps_for(T, dt)
    z0 = np.asarray(z0, dtype=float).ravel()
    if z0.size % 2 != 0:
        raise ValueError("z0 must have even dimension")
    d = z0.size // 2
    X = np.empty((n + 1, d))
    Y = np.empty((n + 1, d))
    X[0] = z0[:d]
    Y[0] = z0[d:]
    rng = philox_rng(seed)
    if d == 1:
        x, y = _fast.free_exact_chunk_d1(
            float(X[0, 0]), float(Y[0, 0]), dt, sigma0, rng, X[1:, 0], Y[1:, 0]
        )
    else:
        sdt = math.sqrt(dt)
        c1 = sigma0 * dt * sdt * 0.5
        c2 = sigma0 * dt * sdt / math.sqrt(12.0)
        x = X[0].copy()
        y = Y[0].copy()
        for k in range(n):
            xi2 = rng.standard_normal(d)
            xi1 = rng.standard_normal(d)
            x = x + y * dt + c1 * xi2 + c2 * xi1
            y = y + sigma0 * sdt * xi2
            X[k + 1] = x
            Y[k + 1] = y
    return Trajectory(
        dt=dt, n_steps=n, X=X, Y=Y, seed=int(seed), model_id=f"free_exact(sigma0={sigma0})"
    )


def free_exact_batch(
    z0, t: float, sigma0: float, n_paths: int, seed: int, n_substeps: int = 4, d: int = 1
):
    """Terminal states (X_t, Y_t) of many exact free paths; arrays (n_paths, d).

    Composes the exact transition over ``n_substeps`` equal steps (the
    composition is exact at any step size; multiple steps exercise it).
    """
    if sigma0 <= 0 or t <= 0:
        raise ValueError("t and sigma0 must be positive")
    z0 = np.asarray(z0, dtype=float).ravel()
    if z0.size != 2 * d:
        raise ValueError(f"z0 must have dimension {2 * d}")
    rng = philox_rng(seed)
    dt = t / n_substeps
    sdt = math.sqrt(dt)
    c1 = sigma0 * dt * sdt * 0.5
    c2 = sigma0 * dt * sdt / math.sqrt(12.0)
    x = np.tile(z0[:d], (n_paths, 1))
    y = np.tile(z0[d:], (n_paths, 1))
    for _ in range(n_substeps):
        xi2 = rng.standard_normal((n_paths, d))
        xi1 = rng.standard_normal((n_paths, d))
        x = x + y * dt + c1 * xi2 + c2 * xi1
        y = y + sigma0 * sdt * xi2
    return x, y


def stationary_start(
    model: ModelSpec,
    burn_T: float,
    dt: float,
    seed: int,
    method: str = "auto",
    anchor=None,
) -> np.ndarray:
    """A start point approximately distributed by the stationary law.

    method='gibbs' draws directly from the closed-form stationary density
    (available for the Langevin catalog models); method='burn_in' runs the
    Euler scheme for burn_T from the anchor (default: the origin) and returns
    the terminal state; 'auto' prefers direct sampling when available.
    """
    if burn_T < 0:
        raise ValueError("burn_T must be nonnegative")
    if method == "auto":
        method = "gibbs" if model.gibbs is not None else "burn_in"
    if method == "gibbs":
        if model.gibbs is None:
            raise ValueError(f"{model.model_id} has no closed-form stationary density")
        return model.gibbs.sample(philox_rng(seed, stream=1), 1)[0]
    if method != "burn_in":
        raise ValueError(f"unknown method {method!r}")
    z0 = np.zeros(2 * model.d) if anchor is None else np.asarray(anchor, dtype=float)
    if burn_T == 0.0:
        return z0.copy()
    traj = simulate_em(model, z0, burn_T, dt, seed)
    return np.concatenate([traj.X[-1], traj.Y[-1]])


def save_trajectory(traj: Trajectory, path) -> None:
    """Binary container: one JSON header line, then row-major float64 X and Y blocks."""
    header = {
        "model_id": traj.model_id,
        "d": traj.d,
        "dt": traj.dt,
        "n_steps": traj.n_steps,
        "seed": traj.seed,
        "burn_in": traj.burn_in,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        f.write(np.ascontiguousarray(traj.X, dtype=np.float64).tobytes())
        f.write(np.ascontiguousarray(traj.Y, dtype=np.float64).tobytes())


def load_trajectory(path) -> Trajectory:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        d = int(header["d"])
        n = int(header["n_steps"])
        count = (n + 1) * d
        X = np.frombuffer(f.read(count * 8), dtype=np.float64).reshape(n + 1, d).copy()
        Y = np.frombuffer(f.read(count * 8), dtype=np.float64).reshape(n + 1, d).copy()
    return Trajectory(
        dt=float(header["dt"]),
        n_steps=n,
        X=X,
        Y=Y,
        seed=int(header["seed"]),
        model_id=str(header["model_id"]),
        burn_in=float(header.get("burn_in", 0.0)),
    )


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """CSV export with columns t, x1..xd, y1..yd."""
    d = traj.d
    t = np.arange(traj.n_steps + 1) * traj.dt
    data = np.column_stack([t, traj.X, traj.Y])
    cols = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)]
    header = ",".join(cols)
    np.savetxt(Path(path), data, delimiter=",", header=header, comments="")
