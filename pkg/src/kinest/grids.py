"""Evaluation grids: finite meshes standing in for sup-norms over a box domain.

A sup-norm over a box D in R^{2d} is evaluated as a max over a uniform mesh;
the surrogacy slack is of order mesh * Lipschitz(estimate - truth), so the
mesh must stay a small fraction of the smallest bandwidth in use (checked by
the estimators, not here).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvalGrid", "parse_domain"]


@dataclass(frozen=True)
class EvalGrid:
    """Uniform mesh over the box [lower, upper] in R^{2d} (position block first)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    mesh: float
    axes: tuple[np.ndarray, ...] = field(repr=False)

    @classmethod
    def from_box(cls, lower, upper, mesh: float) -> "EvalGrid":
        lower = tuple(float(v) for v in np.asarray(lower, dtype=float).ravel())
        upper = tuple(float(v) for v in np.asarray(upper, dtype=float).ravel())
        if len(lower) != len(upper) or len(lower) % 2 != 0 or not lower:
            raise ValueError("lower/upper must be equal-length vectors of even dimension")
        if any(u < l for l, u in zip(lower, upper)):
            raise ValueError("upper must dominate lower")
        if not mesh > 0:
            raise ValueError(f"mesh must be positive, got {mesh}")
        axes = []
        for l, u in zip(lower, upper):
            n = int(np.floor((u - l) / mesh + 1e-9)) + 1
            axes.append(l + mesh * np.arange(n))
        return cls(lower=lower, upper=upper, mesh=float(mesh), axes=tuple(axes))

    @property
    def d(self) -> int:
        return len(self.lower) // 2

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    @property
    def eps_D(self) -> float:
        """inf over the box of the velocity norm, from the velocity-axis intervals."""
        mins = []
        for i in range(self.d, 2 * self.d):
            lo, hi = self.lower[i], self.upper[i]
            mins.append(0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi)))
        return float(np.sqrt(np.sum(np.square(mins))))

    def points(self) -> np.ndarray:
        """All grid points, shape (n_points, 2d), row-major in axis order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def evaluate(self, f) -> np.ndarray:
        """f(x_block, y_block) evaluated on the grid, reshaped to ``shape``."""
        pts = self.points()
        vals = np.asarray(f(pts[:, : self.d], pts[:, self.d :]), dtype=float)
        return vals.reshape(self.shape)


_DOMAIN_RE = re.compile(r"\s*([xy])\s*:\s*\[\s*([^,\]]+)\s*,\s*([^,\]]+)\s*\]\s*")


def parse_domain(spec: str, d: int = 1) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Parse a CLI domain string like "x:[-1,1],y:[0.5,1.5]" into box corners.

    The same interval is applied to every axis of the named block.
    """
    found = {}
    for m in _DOMAIN_RE.finditer(spec):
        found[m.group(1)] = (float(m.group(2)), float(m.group(3)))
    if set(found) != {"x", "y"}:
        raise ValueError(f"domain must give both x and y intervals, got {spec!r}")
    lower = tuple([found["x"][0]] * d + [found["y"][0]] * d)
    upper = tuple([found["x"][1]] * d + [found["y"][1]] * d)
    return lower, upper
