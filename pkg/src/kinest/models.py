"""Model catalog for position-velocity SDEs and their closed-form benchmarks.

A model is the coefficient bundle of

    dX_t = Y_t dt
    dY_t = -( c(X_t, Y_t) Y_t + grad V(X_t) ) dt + sigma(X_t, Y_t) dW_t

with X, Y in R^d.  The drift of the velocity block is b(x, y) =
-(c(x, y) y + grad V(x)).

Benchmarks with analytic ground truth:

* free model (c = 0, V = 0): (X_t, Y_t) is Gaussian per axis with
  E X_t = x0 + y0 t, Var X_t = sigma0^2 t^3 / 3, Var Y_t = sigma0^2 t,
  Cov(X_t, Y_t) = sigma0^2 t^2 / 2 -- the exact transition oracle.
* constant-damping Langevin (c = gamma I, sigma = sigma0 I, confining V):
  stationary density rho(x, y) = Z^{-1} exp(-(2 gamma / sigma0^2)(V(x) +
  |y|^2 / 2)), certified here by a numerical stationarity residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "AssumptionFlags",
    "ModelSpec",
    "GibbsDensity",
    "free_model",
    "harmonic_model",
    "double_well_model",
    "model_from_name",
    "validate_model",
    "gibbs_invariant_density",
    "fokker_planck_residual",
    "free_transition_density",
    "free_moments",
]

# integer codes used by the compiled single-axis steppers in _fast
FAST_FREE = 0
FAST_HARMONIC = 1
FAST_DOUBLE_WELL = 2


@dataclass(frozen=True)
class AssumptionFlags:
    """Which structural assumptions the coefficient bundle is declared to satisfy."""

    c_bounded: bool = True
    sigma_elliptic_bounded: bool = True
    V_lower_bounded: bool = True
    erg_condition: bool = True


@dataclass
class ModelSpec:
    """Coefficient bundle defining one kinetic SDE instance.

    ``damping`` maps (x, y) to the d x d matrix c(x, y); ``grad_potential``
    maps x to grad V(x); ``diffusion`` maps (x, y) to sigma(x, y).  The
    optional fast fields wire catalog models to compiled d = 1 steppers; the
    generic simulator works from the callables alone.
    """

    d: int
    damping: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_potential: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    flags: AssumptionFlags = field(default_factory=AssumptionFlags)
    model_id: str = "custom"
    gibbs: "GibbsDensity | None" = None
    a_jj_sup: float | None = None
    dt_max: float = 0.1
    fast_code: int | None = None
    fast_params: tuple[float, ...] = ()

    def drift(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.d)
        y = np.asarray(y, dtype=float).reshape(self.d)
        return -(self.damping(x, y) @ y + self.grad_potential(x))


def validate_model(model: ModelSpec, n_probe: int = 32, seed: int = 0) -> None:
    """Probe the declared structure at random points; raises on violations.

    Checks shapes and, when ``sigma_elliptic_bounded`` is set, symmetry of the
    diffusion matrix at every probed point.
    """
    rng = np.random.default_rng(seed)
    d = model.d
    for _ in range(n_probe):
        x = rng.normal(size=d)
        y = rng.normal(size=d)
        c = np.asarray(model.damping(x, y), dtype=float)
        g = np.asarray(model.grad_potential(x), dtype=float)
        s = np.asarray(model.diffusion(x, y), dtype=float)
        if c.shape != (d, d) or s.shape != (d, d) or g.shape != (d,):
            raise ValueError(
                f"coefficient shape mismatch: c{c.shape}, sigma{s.shape}, gradV{g.shape}"
            )
        if model.flags.sigma_elliptic_bounded and not np.allclose(s, s.T, atol=1e-12):
            raise ValueError(f"diffusion matrix not symmetric at x={x}, y={y}")


class GibbsDensity:
    """Product-form stationary density of a constant-damping Langevin model.

    rho(x, y) = Z^{-1} exp(-(2 gamma / sigma0^2) (V(x) + |y|^2 / 2)) with a
    separable potential V(x) = sum_i V_i(x_i).  The normalizer is computed by
    adaptive quadrature per axis; non-normalizable potentials are rejected.
    """

    def __init__(
        self,
        gamma: float,
        sigma0: float,
        axis_potentials: Sequence[Callable[[np.ndarray], np.ndarray]],
        x_range: float = 60.0,
    ):
        if gamma <= 0 or sigma0 <= 0:
            raise ValueError("gamma and sigma0 must be positive")
        self.gamma = float(gamma)
        self.sigma0 = float(sigma0)
        self.axis_potentials = list(axis_potentials)
        self.d = len(self.axis_potentials)
        self.inv_temp = 2.0 * gamma / sigma0**2
        self.y_var = sigma0**2 / (2.0 * gamma)
        self._zx: list[float] = []
        self._x_range = float(x_range)

        def boltzmann(Vi):
            # clamp the exponent so divergent potentials yield huge-but-finite
            # integrands that the tail check can reject
            return lambda u: math.exp(min(-self.inv_temp * float(Vi(u)), 700.0))

        for Vi in self.axis_potentials:
            weight = boltzmann(Vi)
            val, _ = integrate.quad(weight, -x_range, x_range, limit=200)
            tail_hi, _ = integrate.quad(weight, x_range / 2.0, x_range, limit=200)
            tail_lo, _ = integrate.quad(weight, -x_range, -x_range / 2.0, limit=200)
            if not math.isfinite(val) or val <= 0 or max(tail_hi, tail_lo) > 1e-3 * val:
                raise ValueError("potential does not normalize: exp(-V) has heavy tails")
            self._zx.append(val)
        self.z_y = (2.0 * math.pi / self.inv_temp) ** (self.d / 2.0)

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xs = np.atleast_2d(x.reshape(-1, self.d))
        ys = np.atleast_2d(y.reshape(-1, self.d))
        logv = -self.inv_temp * 0.5 * np.sum(ys**2, axis=1)
        for i, Vi in enumerate(self.axis_potentials):
            logv = logv - self.inv_temp * np.asarray(Vi(xs[:, i]), dtype=float)
        val = np.exp(logv) / (np.prod(self._zx) * self.z_y)
        return val[0] if val.size == 1 else val

    def sup_norm(self) -> float:
        """Max of rho, located at y = 0 and the per-axis minima of V."""
        grids = [np.linspace(-self._x_range, self._x_range, 20001) for _ in range(self.d)]
        peak = 1.0
        for g, Vi in zip(grids, self.axis_potentials):
            peak *= float(np.max(np.exp(-self.inv_temp * np.asarray(Vi(g)))))
        return peak / (np.prod(self._zx) * self.z_y)

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """Draw n points (x, y) from rho: per-axis inverse CDF in x, Gaussian in y."""
        out = np.empty((n, 2 * self.d))
        for i, Vi in enumerate(self.axis_potentials):
            g = np.linspace(-self._x_range, self._x_range, 200001)
            w = np.exp(-self.inv_temp * np.asarray(Vi(g), dtype=float))
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(g))])
            cdf /= cdf[-1]
            u = rng.uniform(size=n)
            out[:, i] = np.interp(u, cdf, g)
        out[:, self.d :] = rng.normal(scale=math.sqrt(self.y_var), size=(n, self.d))
        return out


def gibbs_invariant_density(gamma: float, sigma0: float, V, x, y) -> np.ndarray:
    """Stationary density value(s) of the constant-damping Langevin model.

    ``V`` is either a single scalar potential (d = 1) or a sequence of
    per-axis potentials whose sum is V(x).  Raises if exp(-V) is not
    normalizable.
    """
    pots = list(V) if isinstance(V, (list, tuple)) else [V]
    dens = GibbsDensity(gamma, sigma0, pots)
    return dens(x, y)


def fokker_planck_residual(
    gamma: float,
    sigma0: float,
    V: Callable[[np.ndarray], np.ndarray],
    grad_V: Callable[[np.ndarray], np.ndarray],
    box: float = 8.0,
    n: int = 241,
    n_test: int = 6,
) -> float:
    """Numerical stationarity certificate for the d = 1 Langevin benchmark.

    Returns max_phi | int (L phi) d mu | over a battery of smooth localized
    test functions, where L = y d/dx - (gamma y + V'(x)) d/dy +
    (sigma0^2/2) d^2/dy^2 is the generator.  Values below ~1e-6 certify that
    the product form is stationary.
    """
    dens = GibbsDensity(gamma, sigma0, [V])
    xs = np.linspace(-box, box, n)
    ys = np.linspace(-box, box, n)
    hx = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    rho = dens(np.column_stack([X.ravel()]), np.column_stack([Y.ravel()])).reshape(X.shape)
    worst = 0.0
    centers = np.linspace(-1.5, 1.5, n_test)
    for cx, cy in zip(centers, centers[::-1]):
        U = (X - cx) ** 2 + (Y - cy) ** 2
        phi = np.exp(-U)
        dphi_dx = -2.0 * (X - cx) * phi
        dphi_dy = -2.0 * (Y - cy) * phi
        d2phi_dy2 = (4.0 * (Y - cy) ** 2 - 2.0) * phi
        gen = (
            Y * dphi_dx
            - (gamma * Y + grad_V(X)) * dphi_dy
            + 0.5 * sigma0**2 * d2phi_dy2
        )
        val = float(np.sum(gen * rho) * hx * hx)
        worst = max(worst, abs(val))
    return worst


def free_moments(t: float, sigma0: float, z0: Sequence[float] | None = None, d: int = 1):
    """Per-axis mean and covariance of the free model at time t from z0.

    Returns (mean_x, mean_y, var_x, cov_xy, var_y); means are d-vectors, the
    covariance entries are scalars shared by all axes.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if z0 is None:
        x0 = np.zeros(d)
        y0 = np.zeros(d)
    else:
        z0 = np.asarray(z0, dtype=float)
        x0, y0 = z0[:d], z0[d:]
    s2 = sigma0**2
    return x0 + y0 * t, y0, s2 * t**3 / 3.0, s2 * t**2 / 2.0, s2 * t


def free_transition_density(z0, z, t: float, sigma0: float = 1.0) -> float:
    """Exact transition density of the free model, product of per-axis bivariate Gaussians."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    z0 = np.asarray(z0, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if z0.size != z.size or z0.size % 2 != 0:
        raise ValueError("z0 and z must be equal-length vectors of even dimension")
    d = z0.size // 2
    s2 = sigma0**2
    det = s2 * t**3 / 3.0 * s2 * t - (s2 * t**2 / 2.0) ** 2  # = s2^2 t^4 / 12
    # inverse of [[s2 t^3/3, s2 t^2/2], [s2 t^2/2, s2 t]]
    a = s2 * t / det
    b = -s2 * t**2 / 2.0 / det
    c = s2 * t**3 / 3.0 / det
    val = 1.0
    for i in range(d):
        dx = z[i] - (z0[i] + z0[d + i] * t)
        dy = z[d + i] - z0[d + i]
        quad = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        val *= math.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))
    return val


def _const_matrix(value: float, d: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    m = value * np.eye(d)

    def f(x, y):
        return m

    return f


def free_model(d: int = 1, sigma0: float = 1.0) -> ModelSpec:
    """c = 0, V = 0: Gaussian benchmark with exact transition oracle (not ergodic)."""
    return ModelSpec(
        d=d,
        damping=_const_matrix(0.0, d),
        grad_potential=lambda x: np.zeros(d),
        diffusion=_const_matrix(sigma0, d),
        flags=AssumptionFlags(erg_condition=False),
        model_id=f"free(d={d},sigma0={sigma0})",
        gibbs=None,
        a_jj_sup=sigma0**2,
        dt_max=0.5,
        fast_code=FAST_FREE,
        fast_params=(0.0, 0.0, sigma0),
    )


def harmonic_model(
    d: int = 1, gamma: float = 1.0, sigma0: float = 1.0, spring: float = 1.0
) -> ModelSpec:
    """Constant-damping Langevin with V(x) = spring * x^2 / 2; Gaussian stationary law."""
    if gamma <= 0 or sigma0 <= 0 or spring <= 0:
        raise ValueError("gamma, sigma0 and spring must be positive")
    gibbs = GibbsDensity(gamma, sigma0, [lambda u, _k=spring: 0.5 * _k * np.square(u)] * d)
    return ModelSpec(
        d=d,
        damping=_const_matrix(gamma, d),
        grad_potential=lambda x, _k=spring: _k * np.asarray(x, dtype=float),
        diffusion=_const_matrix(sigma0, d),
        model_id=f"harmonic(d={d},gamma={gamma},sigma0={sigma0},spring={spring})",
        gibbs=gibbs,
        a_jj_sup=sigma0**2,
        dt_max=min(0.1, 0.1 / max(gamma, spring)),
        fast_code=FAST_HARMONIC,
        fast_params=(gamma, spring, sigma0),
    )


def double_well_model(gamma: float = 1.0, sigma0: float = 1.0) -> ModelSpec:
    """d = 1 Langevin in the double well V(x) = x^4/4 - x^2/2 (bimodal stationary law)."""
    if gamma <= 0 or sigma0 <= 0:
        raise ValueError("gamma and sigma0 must be positive")
    gibbs = GibbsDensity(gamma, sigma0, [lambda u: 0.25 * np.power(u, 4) - 0.5 * np.square(u)])
    return ModelSpec(
        d=1,
        damping=_const_matrix(gamma, 1),
        grad_potential=lambda x: np.asarray(x, dtype=float) ** 3 - np.asarray(x, dtype=float),
        diffusion=_const_matrix(sigma0, 1),
        model_id=f"double_well(gamma={gamma},sigma0={sigma0})",
        gibbs=gibbs,
        a_jj_sup=sigma0**2,
        dt_max=0.01,
        fast_code=FAST_DOUBLE_WELL,
        fast_params=(gamma, 0.0, sigma0),
    )


def model_from_name(name: str, **params) -> ModelSpec:
    """Catalog lookup used by the CLI: 'free', 'harmonic' or 'double_well'."""
    catalog = {"free": free_model, "harmonic": harmonic_model, "double_well": double_well_model}
    if name not in catalog:
        raise ValueError(f"unknown model {name!r}; known: {sorted(catalog)}")
    return catalog[name](**params)
