"""Compactly supported product kernels of prescribed order and bandwidth grids.

Univariate kernels live on [-1/2, 1/2] and are polynomials there (zero
outside).  A kernel of order ``ell`` integrates to one and has vanishing
moments 1..ell, so that smoothing bias scales like h^beta for beta <= ell + 1.
The construction uses the reproducing kernel of the Legendre basis: with
phi_j orthonormal on [-1/2, 1/2],

    K(u) = sum_{j=0..ell} phi_j(0) * phi_j(u),

which integrates any polynomial p of degree <= ell to p(0), i.e. has exactly
the required moments.  Odd-degree terms drop out (phi_j(0) = 0), so every
kernel here is symmetric.

Also provided: rescaled product evaluation (h1 h2)^{-d} K1(x/h1) K2(y/h2),
numeric convolutions K_h * K_eta used by two-bandwidth comparison estimators,
the dyadic candidate bandwidth grid {h_i = base^{-k_i} : base^{k1+k2} <=
t^{1/(2d)}}, and the polynomial-envelope bandwidth-class membership test.

Kernels and convolutions are immutable after construction (caches are built
in the constructor), so evaluation is read-only and concurrency-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly

__all__ = [
    "UnivariateKernel",
    "ProductKernel",
    "ConvolvedKernel1D",
    "BandwidthGrid",
    "KernelConditioningError",
    "ConvolutionMeshError",
    "make_order_kernel",
    "uniform_kernel",
    "eval_scaled",
    "convolve_pair",
    "candidate_grid",
    "in_H_class",
    "kernel_to_descriptor",
    "kernel_from_descriptor",
    "validate_descriptor",
]

MAX_ORDER = 12

_GAUSS_NODES, _GAUSS_WEIGHTS = npleg.leggauss(24)


class KernelConditioningError(RuntimeError):
    """Raised when a constructed kernel fails its own moment conditions."""


class ConvolutionMeshError(RuntimeError):
    """Raised when the cached convolution mesh cannot meet the requested tolerance."""


def _gauss_integral(f: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> float:
    """24-node Gauss-Legendre integral of f over [a, b]; exact for degree <= 47."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return float(half * np.sum(_GAUSS_WEIGHTS * f(mid + half * _GAUSS_NODES)))


@dataclass(frozen=True)
class UnivariateKernel:
    """Polynomial kernel on [-1/2, 1/2], zero outside.

    ``coefficients`` are ascending power coefficients of the polynomial on the
    support.  ``lipschitz`` bounds |K(u) - K(v)| / |u - v| on the closed
    support (the jump to zero at the support edge is not included).
    """

    coefficients: tuple[float, ...]
    order: int
    lipschitz: float
    sup_norm: float
    l2_norm: float

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= 0.5
        vals = nppoly.polyval(u, np.asarray(self.coefficients))
        return np.where(inside, vals, 0.0)

    def moment(self, k: int) -> float:
        """Exact k-th moment int u^k K(u) du over the support."""
        coef = np.asarray(self.coefficients)
        return _gauss_integral(lambda u: u**k * nppoly.polyval(u, coef), -0.5, 0.5)

    def antiderivative_unit(self, u) -> np.ndarray:
        """Exact antiderivative int_{-1/2}^{min(u, 1/2)} K, clamped outside the support."""
        anti = nppoly.polyint(np.asarray(self.coefficients))
        uc = np.clip(np.asarray(u, dtype=float), -0.5, 0.5)
        return nppoly.polyval(uc, anti) - nppoly.polyval(-0.5, anti)

    def ik_table(self, h: float, npts: int = 2049) -> tuple[float, float, np.ndarray]:
        """Sampled antiderivative of the rescaled kernel h^{-1} K(./h).

        Returns (lo, dx, values) with values[i] = int_{-h/2}^{lo + i*dx} K_h;
        values[0] = 0 and values[-1] = 1.  Used by the accumulation engines to
        apply exact cell-averaged kernel weights.
        """
        if not 0.0 < h:
            raise ValueError(f"h must be positive, got {h}")
        us = np.linspace(-0.5, 0.5, npts)
        ik = self.antiderivative_unit(us)
        return -0.5 * h, h / (npts - 1), ik

    def support_width(self) -> float:
        return 1.0


def _legendre_weight(j: int) -> float:
    """(2j+1) * P_j(0): the coefficient of P_j(2u) in the reproducing kernel."""
    if j % 2 == 1:
        return 0.0
    m = j // 2
    pj0 = (-1.0) ** m * math.comb(2 * m, m) / 4.0**m
    return (2 * j + 1) * pj0


def make_order_kernel(ell: int) -> UnivariateKernel:
    """Construct the symmetric polynomial kernel of order ``ell`` on [-1/2, 1/2].

    Moments 1..ell vanish and the mass is 1 by the reproducing property of the
    orthonormal Legendre basis.  ``ell = 0`` and ``ell = 1`` both give the
    uniform kernel.  Construction is verified numerically and a
    :class:`KernelConditioningError` is raised if any moment condition fails
    at 1e-10, which caps usable orders at ``MAX_ORDER``.
    """
    if not isinstance(ell, int) or ell < 0:
        raise ValueError(f"order must be a nonnegative integer, got {ell!r}")
    if ell > MAX_ORDER:
        raise ValueError(f"order {ell} exceeds the conditioning cap {MAX_ORDER}")
    # K(u) = sum_j phi_j(0) phi_j(u) with phi_j(u) = sqrt(2j+1) P_j(2u).
    leg = np.zeros(ell + 1)
    for j in range(0, ell + 1, 2):
        leg[j] = _legendre_weight(j)
    # Convert sum_j c_j P_j(2u) to ascending power coefficients in u.
    poly_in_t = npleg.leg2poly(leg)  # coefficients in t = 2u
    coef = poly_in_t * (2.0 ** np.arange(poly_in_t.size))
    kernel = _finalize_kernel(tuple(float(c) for c in coef), ell)
    for k in range(1, ell + 1):
        if abs(kernel.moment(k)) > 1e-10:
            raise KernelConditioningError(
                f"moment {k} of order-{ell} kernel is {kernel.moment(k):.3e}"
            )
    if abs(kernel.moment(0) - 1.0) > 1e-10:
        raise KernelConditioningError(f"mass of order-{ell} kernel is {kernel.moment(0):.12f}")
    return kernel


def _finalize_kernel(coefficients: tuple[float, ...], order: int) -> UnivariateKernel:
    coef = np.asarray(coefficients, dtype=float)
    deriv = nppoly.polyder(coef)
    # |K'| attains its max at an endpoint or at a root of K''.
    crit = [-0.5, 0.5]
    if deriv.size > 1:
        second = nppoly.polyder(deriv)
        roots = nppoly.polyroots(second) if second.size > 1 else np.array([])
        crit += [float(r.real) for r in roots if abs(r.imag) < 1e-12 and abs(r.real) <= 0.5]
    lip = max(abs(float(nppoly.polyval(c, deriv))) for c in crit) if deriv.size else 0.0
    mesh = np.linspace(-0.5, 0.5, 4097)
    vals = nppoly.polyval(mesh, coef)
    sup = float(np.max(np.abs(vals)))
    l2 = math.sqrt(_gauss_integral(lambda u: nppoly.polyval(u, coef) ** 2, -0.5, 0.5))
    return UnivariateKernel(
        coefficients=coefficients, order=order, lipschitz=lip, sup_norm=sup, l2_norm=l2
    )


def uniform_kernel() -> UnivariateKernel:
    """The order-1 box kernel, constant 1 on [-1/2, 1/2]."""
    return make_order_kernel(1)


@dataclass(frozen=True)
class ProductKernel:
    """Separable kernel on R^{2d}: product of k1 over position axes and k2 over velocity axes."""

    k1: UnivariateKernel
    k2: UnivariateKernel
    d: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.d, int) or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d!r}")

    @property
    def sup_norm(self) -> float:
        return (self.k1.sup_norm * self.k2.sup_norm) ** self.d

    @property
    def l2_norm(self) -> float:
        return (self.k1.l2_norm * self.k2.l2_norm) ** self.d

    @property
    def kernel_id(self) -> str:
        return f"poly{self.k1.order}xpoly{self.k2.order}d{self.d}"

    def __call__(self, x, y) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        vx = np.prod(self.k1(x.reshape(-1, self.d)), axis=-1)
        vy = np.prod(self.k2(y.reshape(-1, self.d)), axis=-1)
        out = vx * vy
        return out[0] if out.size == 1 else out


def eval_scaled(K: ProductKernel, h1: float, h2: float, x, y) -> np.ndarray:
    """Rescaled product kernel (h1 h2)^{-d} K1(x/h1) K2(y/h2); zero off-support."""
    if not (0.0 < h1 <= 1.0 and 0.0 < h2 <= 1.0):
        raise ValueError(f"bandwidths must lie in (0, 1], got ({h1}, {h2})")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (h1 * h2) ** (-K.d) * K(x / h1, y / h2)


class ConvolvedKernel1D:
    """Numeric convolution (K_h * K_eta)(u) of two rescaled copies of a kernel.

    Values are computed by exact piecewise Gauss quadrature at the nodes of a
    uniform mesh over the support [-(h+eta)/2, (h+eta)/2] and linearly
    interpolated in between.  The pair (h, eta) is canonicalized (convolution
    is commutative), so swapping the bandwidths returns identical values.
    """

    def __init__(
        self,
        kernel: UnivariateKernel,
        h: float,
        eta: float,
        mesh_points: int = 4097,
        mass_tol: float = 1e-8,
        eval_tol: float = 1e-3,
    ):
        if not (0.0 < h <= 1.0 and 0.0 < eta <= 1.0):
            raise ValueError(f"bandwidths must lie in (0, 1], got ({h}, {eta})")
        self.kernel = kernel
        self.h, self.eta = (h, eta) if h <= eta else (eta, h)
        self.half_width = 0.5 * (h + eta)
        self.mesh = np.linspace(-self.half_width, self.half_width, mesh_points)
        self.values = np.array([self._exact(u) for u in self.mesh])
        self._cum = np.array([self._exact_cum(u) for u in self.mesh])
        self.mass = float(self._cum[-1])
        if abs(self.mass - 1.0) > mass_tol:
            raise ConvolutionMeshError(
                f"convolution mass {self.mass:.12f} misses 1 by more than {mass_tol:g} "
                f"at {mesh_points} mesh points"
            )
        probe = np.linspace(-self.half_width, self.half_width, 37)[1:-1]
        err = max(abs(self(u) - self._exact(u)) for u in probe)
        scale = max(np.max(np.abs(self.values)), 1.0)
        if err > eval_tol * scale:
            raise ConvolutionMeshError(
                f"interpolation error {err:.3e} exceeds {eval_tol:g} * peak at "
                f"{mesh_points} mesh points"
            )

    def _exact(self, u: float) -> float:
        """int K_h(v - u) K_eta(v) dv by Gauss quadrature split at kernel breakpoints."""
        h, eta = self.h, self.eta
        k = self.kernel
        lo = max(-eta / 2.0, u - h / 2.0)
        hi = min(eta / 2.0, u + h / 2.0)
        if lo >= hi:
            return 0.0
        cuts = sorted({lo, hi, -eta / 2.0, eta / 2.0, u - h / 2.0, u + h / 2.0})
        cuts = [c for c in cuts if lo - 1e-15 <= c <= hi + 1e-15]
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a < 1e-15:
                continue
            total += _gauss_integral(
                lambda v: k((v - u) / h) * k(v / eta) / (h * eta), a, b
            )
        return total

    def _exact_cum(self, u: float) -> float:
        """Exact antiderivative int_{-w}^{u} (K_h * K_eta), via the unit antiderivative.

        With A the antiderivative of the base kernel, the swap of integration
        order gives C(u) = 1 - int K_eta(v) A((v - u)/h) dv, again a piecewise
        polynomial integral.
        """
        h, eta = self.h, self.eta
        k = self.kernel
        lo = max(-eta / 2.0, u - h / 2.0)
        hi = min(eta / 2.0, u + h / 2.0)
        tail = 0.0
        if eta / 2.0 > u + h / 2.0:
            # region where A = 1: the remaining mass of K_eta beyond u + h/2
            tail = 1.0 - float(k.antiderivative_unit((u + h / 2.0) / eta))
        inner = 0.0
        if lo < hi:
            cuts = sorted({lo, hi, -eta / 2.0, eta / 2.0, u - h / 2.0, u + h / 2.0})
            cuts = [c for c in cuts if lo - 1e-15 <= c <= hi + 1e-15]
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b - a < 1e-15:
                    continue
                inner += _gauss_integral(
                    lambda v: k(v / eta) / eta * k.antiderivative_unit((v - u) / h), a, b
                )
        return 1.0 - (inner + tail)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.interp(u, self.mesh, self.values, left=0.0, right=0.0)

    def integral(self, u) -> np.ndarray:
        """Antiderivative of the interpolant from the left support edge."""
        u = np.asarray(u, dtype=float)
        return np.interp(u, self.mesh, self._cum, left=0.0, right=self.mass)

    def ik_table(self, npts: int | None = None) -> tuple[float, float, np.ndarray]:
        """Sampled antiderivative over the support, for the accumulation engines."""
        if npts is None or npts == self.mesh.size:
            dx = self.mesh[1] - self.mesh[0]
            return float(self.mesh[0]), float(dx), self._cum
        us = np.linspace(-self.half_width, self.half_width, npts)
        return float(us[0]), float(us[1] - us[0]), self.integral(us)

    def support_width(self) -> float:
        return 2.0 * self.half_width


def convolve_pair(
    K: UnivariateKernel, h: float, eta: float, mesh_points: int = 4097
) -> ConvolvedKernel1D:
    """Convolution of two rescalings of the same univariate kernel (canonicalized in (h, eta))."""
    return ConvolvedKernel1D(K, h, eta, mesh_points=mesh_points)


@dataclass(frozen=True)
class BandwidthGrid:
    """Dyadic-type candidate set {(base^{-k1}, base^{-k2})} with base^{k1+k2} <= t^{1/(2d)}."""

    base: float
    t: float
    d: int
    ks: tuple[tuple[int, int], ...] = field(repr=False)
    pairs: tuple[tuple[float, float], ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def restrict(self, Q1: float, Q2: float) -> "BandwidthGrid":
        """Subset whose bandwidths satisfy the polynomial-envelope class bounds at time t."""
        keep = [
            i
            for i, (h1, h2) in enumerate(self.pairs)
            if in_H_class([h1], Q1, Q2, [self.t]) and in_H_class([h2], Q1, Q2, [self.t])
        ]
        if not keep:
            raise ValueError("restricted candidate grid is empty")
        return BandwidthGrid(
            base=self.base,
            t=self.t,
            d=self.d,
            ks=tuple(self.ks[i] for i in keep),
            pairs=tuple(self.pairs[i] for i in keep),
        )


def candidate_grid(t: float, d: int, base: float = 2.0) -> BandwidthGrid:
    """Enumerate the admissible candidate bandwidth pairs at horizon t.

    The grid has Theta(log^2 t) elements; t slightly above 1 leaves only the
    single pair (1, 1).
    """
    if not t > 1.0:
        raise ValueError(f"t must exceed 1, got {t}")
    if not base > 1.0:
        raise ValueError(f"grid base must exceed 1, got {base}")
    if not isinstance(d, int) or d < 1:
        raise ValueError(f"d must be an integer >= 1, got {d!r}")
    budget = math.log(t) / (2.0 * d)
    kmax = int(math.floor(budget / math.log(base) + 1e-12))
    ks = [
        (k1, k2)
        for k1 in range(kmax + 1)
        for k2 in range(kmax + 1)
        if (k1 + k2) * math.log(base) <= budget + 1e-12
    ]
    ks.sort()
    pairs = tuple((base**-k1, base**-k2) for k1, k2 in ks)
    return BandwidthGrid(base=base, t=t, d=d, ks=tuple(ks), pairs=pairs)


def in_H_class(
    h: Callable[[float], float] | Sequence[float],
    Q1: float,
    Q2: float,
    T_probe: Sequence[float],
) -> bool:
    """Membership test for the polynomial-envelope bandwidth class at the probe times.

    True iff  1/h(T) <= Q1 * (1 + T)^Q1  and  h(T) <= min(Q2 * T^{-Q2}, 1)
    at every probe time.  The constant and the exponent are deliberately the
    same parameter on each side.
    """
    probes = [float(T) for T in T_probe]
    if any(T <= 0 for T in probes):
        raise ValueError("probe times must be positive")
    if callable(h):
        values = [float(h(T)) for T in probes]
    else:
        values = [float(v) for v in h]
        if len(values) != len(probes):
            raise ValueError("sampled curve and probe times have different lengths")
    for T, val in zip(probes, values):
        if val <= 0.0:
            return False
        if 1.0 / val > Q1 * (1.0 + T) ** Q1:
            return False
        if val > min(Q2 * T**-Q2, 1.0):
            return False
    return True


def kernel_to_descriptor(k: UnivariateKernel) -> dict:
    """JSON-ready descriptor {order, coefficients, lipschitz, sup_norm, l2_norm}."""
    return {
        "order": k.order,
        "coefficients": list(k.coefficients),
        "lipschitz": k.lipschitz,
        "sup_norm": k.sup_norm,
        "l2_norm": k.l2_norm,
    }


def kernel_from_descriptor(desc: dict) -> UnivariateKernel:
    return UnivariateKernel(
        coefficients=tuple(float(c) for c in desc["coefficients"]),
        order=int(desc["order"]),
        lipschitz=float(desc["lipschitz"]),
        sup_norm=float(desc["sup_norm"]),
        l2_norm=float(desc["l2_norm"]),
    )


def validate_descriptor(desc: dict, moment_tol: float = 1e-10) -> list[str]:
    """Check a kernel descriptor: mass, vanishing moments, and declared norms.

    Returns a list of human-readable problems (empty when the descriptor is
    consistent).
    """
    problems: list[str] = []
    k = kernel_from_descriptor(desc)
    if abs(k.moment(0) - 1.0) > moment_tol:
        problems.append(f"mass is {k.moment(0):.12f}, expected 1")
    for m in range(1, k.order + 1):
        val = k.moment(m)
        if abs(val) > moment_tol:
            problems.append(f"moment {m} is {val:.3e}, expected 0")
    fresh = _finalize_kernel(k.coefficients, k.order)
    for attr in ("lipschitz", "sup_norm", "l2_norm"):
        declared, actual = getattr(k, attr), getattr(fresh, attr)
        if abs(declared - actual) > 1e-8 * max(1.0, abs(actual)):
            problems.append(f"{attr} declared {declared:.10g}, recomputed {actual:.10g}")
    mesh = np.linspace(-0.5, 0.5, 2001)
    vals = k(mesh)
    steps = np.abs(np.diff(vals)) / (mesh[1] - mesh[0])
    if steps.size and float(np.max(steps)) > k.lipschitz * (1.0 + 1e-6) + 1e-12:
        problems.append("Lipschitz constant violated on a fine mesh")
    return problems
