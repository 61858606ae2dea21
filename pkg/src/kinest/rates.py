"""Rate calculus for sup-norm estimation of kinetic (position-velocity) diffusions.

The joint process Z = (X, Y) on R^{2d} is degenerate: only the velocity block Y
carries noise, and X integrates Y. Kernel density estimation from a continuous
record over [0, T] then converges faster than in the classical i.i.d. setting,
with a rate exponent that depends on the anisotropic smoothness (beta1 for
position axes, beta2 for velocity axes), the block dimension d, and whether the
evaluation domain is bounded away from zero velocity (eps > 0).

Everything in this module is exact closed-form arithmetic:

    bbar    = 2 / (1/beta1 + 1/beta2)                     (harmonic mean)
    Upsilon = rate-improvement exponent, 6 regime branches (see `upsilon`)
    Psi(T)  = (log T / T)^( bbar / (2*(bbar + d) - Upsilon) )
    chi_B   = sqrt(log T) on an exceptional low-dimensional parameter set,
              else 1
    psi_d, psi_circ_d = variance scale factors of the density estimator
              (general regime / positive-velocity regime)

Rates are returned with constant 1: multiplicative constants cancel in the
log-log slope fits used to verify exponents, which is the intended instrument.
All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "SmoothnessParams",
    "RegimeKey",
    "BandwidthError",
    "upsilon",
    "rate_exponent",
    "psi_rate",
    "chi_B_member",
    "chi_B_factor",
    "psi_variance_scale",
    "psi_branch_general",
    "psi_branch_refined",
    "bandwidth_from_smoothness",
    "truncation_r_T",
]

_E = math.e


class BandwidthError(ValueError):
    """Raised when a bandwidth prescription falls outside (0, 1]."""


@dataclass(frozen=True)
class SmoothnessParams:
    """Anisotropic Hoelder smoothness: (beta1, L1) on position axes, (beta2, L2) on velocity axes."""

    beta1: float
    beta2: float
    L1: float = 1.0
    L2: float = 1.0

    def __post_init__(self) -> None:
        for name in ("beta1", "beta2", "L1", "L2"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise ValueError(f"{name} must be a positive finite real, got {v}")

    @property
    def harmonic_mean(self) -> float:
        """bbar = 2 / (1/beta1 + 1/beta2); always between min and max of the betas."""
        return 2.0 / (1.0 / self.beta1 + 1.0 / self.beta2)


@dataclass(frozen=True)
class RegimeKey:
    """Arguments selecting a rate regime: smoothness pair, block dimension, velocity offset.

    ``eps`` is the infimum of the velocity norm over the evaluation domain;
    only its sign matters for branch selection.
    """

    beta1: float
    beta2: float
    d: int
    eps: float = 0.0

    def __post_init__(self) -> None:
        if not (self.beta1 > 0.0 and self.beta2 > 0.0):
            raise ValueError("smoothness parameters must be positive")
        if not isinstance(self.d, int) or self.d < 1:
            raise ValueError(f"d must be an integer >= 1, got {self.d!r}")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")

    @property
    def harmonic_mean(self) -> float:
        return 2.0 / (1.0 / self.beta1 + 1.0 / self.beta2)


def upsilon(key: RegimeKey) -> float:
    """Rate-improvement exponent Upsilon(beta1, beta2, d, eps).

    Branches (closed inequality picks the branch listed first, which keeps the
    predicate deterministic; both sides agree at the boundary):

        eps = 0:  (2/3)(3*b1 + b2)/(b1 + b2)   if 3*b1 >= b2 and d = 1
                  4*b1/(b1 + b2)               if 3*b1 >= b2 and d >= 2
                  2*(b2 - b1)/(b1 + b2)        if 3*b1 <  b2
        eps > 0:  (2*b1 + b2)/(b1 + b2)        if 2*b1 >= b2 and d = 1
                  4*b1/(b1 + b2)               if 2*b1 >= b2 and d >= 2
                  2*b2/(b1 + b2)               if 2*b1 <  b2

    Upsilon = 0 recovers the i.i.d. rate and Upsilon = 2 the rate of a fully
    nondegenerate diffusion; here Upsilon is always strictly positive, and it
    stays <= 2 whenever beta1 <= beta2 (it can exceed 2 for d >= 2 when the
    position block is much smoother than the velocity block).
    """
    b1, b2, d = key.beta1, key.beta2, key.d
    s = b1 + b2
    if key.eps == 0.0:
        if 3.0 * b1 >= b2:
            if d == 1:
                return (2.0 / 3.0) * (3.0 * b1 + b2) / s
            return 4.0 * b1 / s
        return 2.0 * (b2 - b1) / s
    if 2.0 * b1 >= b2:
        if d == 1:
            return (2.0 * b1 + b2) / s
        return 4.0 * b1 / s
    return 2.0 * b2 / s


def rate_exponent(key: RegimeKey, upsilon_override: float | None = None) -> float:
    """Exponent alpha in the sup-norm rate (log T / T)^alpha.

    alpha = bbar / (2*(bbar + d) - Upsilon).  Passing ``upsilon_override=0``
    gives the classical i.i.d. exponent bbar / (2*(bbar + d)) for comparison;
    ``upsilon_override=2`` gives the nondegenerate-diffusion exponent.
    """
    ups = upsilon(key) if upsilon_override is None else float(upsilon_override)
    bbar = key.harmonic_mean
    denom = 2.0 * (bbar + key.d) - ups
    if denom <= 0.0:
        raise ValueError(f"degenerate rate denominator {denom} for {key}")
    return bbar / denom


def psi_rate(T: float, key: RegimeKey, upsilon_override: float | None = None) -> float:
    """Rate value Psi(T) = (log T / T)^alpha, strictly decreasing in T for T > e."""
    if not T > _E:
        raise ValueError(f"T must exceed e so that log T > 1, got {T}")
    return (math.log(T) / T) ** rate_exponent(key, upsilon_override)


def chi_B_member(key: RegimeKey) -> bool:
    """Whether the parameters fall in the exceptional set carrying an extra sqrt(log T).

    True iff one of (strict inequalities, low-dimensional cases only):

        3*b1 < b2  and d = 1 and eps = 0
        3*b1 > b2  and d = 2 and eps = 0
        2*b1 > b2  and d = 2 and eps > 0
    """
    b1, b2, d = key.beta1, key.beta2, key.d
    if key.eps == 0.0:
        return (3.0 * b1 < b2 and d == 1) or (3.0 * b1 > b2 and d == 2)
    return 2.0 * b1 > b2 and d == 2


def chi_B_factor(T: float, key: RegimeKey) -> float:
    """Logarithmic rate modifier: sqrt(log T) on the exceptional set, else 1."""
    if not T > _E:
        raise ValueError(f"T must exceed e, got {T}")
    return math.sqrt(math.log(T)) if chi_B_member(key) else 1.0


def _check_scale_args(s1: float, s2: float, d: int, T: float) -> None:
    if not (0.0 < s1 <= 1.0 and 0.0 < s2 <= 1.0):
        raise ValueError(f"scales must lie in (0, 1], got s1={s1}, s2={s2}")
    if not isinstance(d, int) or d < 1:
        raise ValueError(f"d must be an integer >= 1, got {d!r}")
    if not T > _E:
        raise ValueError(f"T must exceed e, got {T}")


def psi_branch_general(s1: float, s2: float, d: int, T: float) -> tuple[float, float]:
    """The two branch values (psi_1d, psi_2d) of the general-regime variance scale.

        psi_1d = s2^{-1} sqrt(log T)            (d = 1)
                 s1^{(1-d)/2} s2^{-(1+d)/2}     (d >= 2)
        psi_2d = s1^{-1/3}                      (d = 1)
                 s1^{-1} sqrt(log T)            (d = 2)
                 s1^{-d/2} s2^{1-d/2}           (d >= 3)
    """
    _check_scale_args(s1, s2, d, T)
    root_log = math.sqrt(math.log(T))
    if d == 1:
        p1 = root_log / s2
        p2 = s1 ** (-1.0 / 3.0)
    elif d == 2:
        p1 = s1 ** (-0.5) * s2 ** (-1.5)
        p2 = root_log / s1
    else:
        p1 = s1 ** ((1.0 - d) / 2.0) * s2 ** (-(1.0 + d) / 2.0)
        p2 = s1 ** (-d / 2.0) * s2 ** (1.0 - d / 2.0)
    return p1, p2


def psi_branch_refined(s1: float, s2: float, d: int, T: float) -> tuple[float, float]:
    """Branch values of the refined variance scale, valid where the velocity stays away from 0.

        psi_1d = s1^{(1-d)/2} s2^{-d/2}
        psi_2d = s1^{-1/4}                         (d = 1)
                 general psi_2d                    (d >= 2)
    """
    _check_scale_args(s1, s2, d, T)
    p1 = s1 ** ((1.0 - d) / 2.0) * s2 ** (-d / 2.0)
    if d == 1:
        p2 = s1 ** (-0.25)
    else:
        p2 = psi_branch_general(s1, s2, d, T)[1]
    return p1, p2


def psi_variance_scale(s1: float, s2: float, d: int, T: float, refined: bool = False) -> float:
    """Variance scale of the density estimator: max of the two branch values.

    With ``refined=False`` this is psi_d(s1, s2, T); with ``refined=True``
    the scale psi_circ_d for domains with strictly positive velocity norm,
    which is never larger than the general one.
    """
    branch = psi_branch_refined if refined else psi_branch_general
    return max(branch(s1, s2, d, T))


def bandwidth_from_smoothness(
    T: float,
    params: SmoothnessParams,
    key: RegimeKey,
    target: str,
) -> tuple[float, float]:
    """Rate-balancing bandwidth pair (h1, h2) for the given estimation target.

    target="density":  h_i = Psi(T)^{1/beta_i}, with eps taken from ``key``
                       (pass eps = inf of the velocity norm over the domain to
                       engage the refined regime).
    target="drift":    h_i = (log T / T)^{ bbar / (beta_i * (2*bbar + d)) }.

    Both choices equalize h1^{beta1} = h2^{beta2} (bias balancing).  Raises
    :class:`BandwidthError` when T is too small for the asymptotic
    prescription, i.e. when a bandwidth would exceed 1.
    """
    if key.beta1 != params.beta1 or key.beta2 != params.beta2:
        raise ValueError("SmoothnessParams and RegimeKey disagree on (beta1, beta2)")
    if target == "density":
        base = psi_rate(T, key)
    elif target == "drift":
        if not T > _E:
            raise ValueError(f"T must exceed e, got {T}")
        bbar = params.harmonic_mean
        base = (math.log(T) / T) ** (bbar / (2.0 * bbar + key.d))
    else:
        raise ValueError(f"unknown target {target!r}; expected 'density' or 'drift'")
    h1 = base ** (1.0 / params.beta1)
    h2 = base ** (1.0 / params.beta2)
    if h1 > 1.0 or h2 > 1.0:
        raise BandwidthError(
            f"bandwidth above 1 (h1={h1:.4g}, h2={h2:.4g}): T={T} too small "
            f"for the asymptotic prescription"
        )
    return h1, h2


def truncation_r_T(T: float, params: SmoothnessParams, d: int) -> float:
    """Denominator truncation level r_T = Psi*chi_B (at eps=0) times exp(sqrt(log T)).

    Decays to 0 but slower than the rate itself: r_T / (Psi*chi_B) =
    exp(sqrt(log T)) -> infinity, which is what makes the truncated
    drift-quotient estimator safe.
    """
    key = RegimeKey(params.beta1, params.beta2, d, 0.0)
    return psi_rate(T, key) * chi_B_factor(T, key) * math.exp(math.sqrt(math.log(T)))
