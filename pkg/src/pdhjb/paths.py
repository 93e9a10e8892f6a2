"""Discrete paths on [0, t], the sup norm, path extensions and the
finite-difference estimators of the pathwise (horizontal/vertical)
derivatives.

Paths live on explicit time grids.  Operations that need two paths on a
common grid refine to the union grid with left-constant (cadlag)
interpolation; the sup norm is taken over grid points only, so the grid
resolution is the declared discretization error.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators import norm

__all__ = [
    "DiscretePath",
    "PathFunctional",
    "DupireDerivatives",
    "ConditioningWarning",
    "sup_norm",
    "extend_flat",
    "extend_semigroup",
    "vertical_bump",
    "align",
    "difference_path",
    "metric_d_infty",
    "dupire_derivatives",
    "path_to_json",
    "path_from_json",
    "constant_path",
]

_GRID_TOL = 1e-12


class ConditioningWarning(UserWarning):
    """Finite-difference step small enough that round-off may dominate."""


@dataclass(frozen=True)
class DiscretePath:
    """A path on the grid 0 = s_0 < ... < s_n = horizon with values in R^dim.

    Values are interpreted left-constantly between grid points (cadlag).
    Immutable; all operations return new paths.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("grid must be a nonempty 1-d array")
        if abs(grid[0]) > _GRID_TOL:
            raise ValueError(f"grid must start at 0, got {grid[0]}")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if values.shape[0] != grid.size:
            raise ValueError(f"{values.shape[0]} values for {grid.size} grid points")
        grid = grid.copy()
        values = values.copy()
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def value_at(self, s: float) -> np.ndarray:
        """Left-constant evaluation gamma(s) for 0 <= s <= horizon."""
        if s < -_GRID_TOL or s > self.horizon + _GRID_TOL:
            raise ValueError(f"time {s} outside [0, {self.horizon}]")
        idx = int(np.searchsorted(self.grid, s + _GRID_TOL, side="right")) - 1
        return self.values[max(idx, 0)]

    def restrict(self, s: float) -> "DiscretePath":
        """Restriction gamma|_[0,s]; s is appended as a grid point if absent."""
        if s > self.horizon + _GRID_TOL or s < -_GRID_TOL:
            raise ValueError(f"cannot restrict to {s}, horizon is {self.horizon}")
        keep = self.grid <= s + _GRID_TOL
        grid = self.grid[keep]
        values = self.values[keep]
        if abs(grid[-1] - s) > _GRID_TOL:
            grid = np.append(grid, s)
            values = np.vstack([values, self.value_at(s)])
        return DiscretePath(grid, values)

    def values_on(self, grid: np.ndarray) -> np.ndarray:
        """Left-constant values at the given times (all <= horizon)."""
        idx = np.searchsorted(self.grid, np.asarray(grid) + _GRID_TOL, side="right") - 1
        return self.values[np.maximum(idx, 0)]

    def with_terminal(self, x: np.ndarray) -> "DiscretePath":
        values = self.values.copy()
        values[-1] = x
        return DiscretePath(self.grid, values)


def constant_path(value, horizon: float, n_points: int = 2) -> DiscretePath:
    """Path identically equal to ``value`` on [0, horizon]."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    if horizon == 0.0:
        return DiscretePath(np.array([0.0]), value[None, :])
    grid = np.linspace(0.0, horizon, max(n_points, 2))
    return DiscretePath(grid, np.tile(value, (grid.size, 1)))


def sup_norm(p: DiscretePath) -> float:
    """|gamma|_0 = max over grid points of the coefficient norm."""
    return float(np.max(np.linalg.norm(p.values, axis=1)))


def extend_flat(p: DiscretePath, s: float) -> DiscretePath:
    """Extension constant at the terminal value, gamma(r) = gamma(t) for r > t."""
    if s < p.horizon - _GRID_TOL:
        raise ValueError(f"extension time {s} below horizon {p.horizon}")
    if abs(s - p.horizon) <= _GRID_TOL:
        return p
    grid = np.append(p.grid, s)
    values = np.vstack([p.values, p.terminal])
    return DiscretePath(grid, values)


def extend_semigroup(op, p: DiscretePath, s: float, n_extra: int = 0) -> DiscretePath:
    """Extension flowed by the semigroup, gamma(r) = e^{(r-t)A} gamma(t) for r > t.

    ``n_extra`` intermediate grid points are inserted on (t, s).
    """
    if s < p.horizon - _GRID_TOL:
        raise ValueError(f"extension time {s} below horizon {p.horizon}")
    if abs(s - p.horizon) <= _GRID_TOL:
        return p
    tail = np.linspace(p.horizon, s, n_extra + 2)[1:]
    tail_vals = np.stack([op.semigroup_apply(r - p.horizon, p.terminal) for r in tail])
    return DiscretePath(np.concatenate([p.grid, tail]),
                        np.vstack([p.values, tail_vals]))


def vertical_bump(p: DiscretePath, h: np.ndarray) -> DiscretePath:
    """Bump only the terminal value, gamma(t) -> gamma(t) + h."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.size != p.dim:
        raise ValueError(f"bump dimension {h.size} != path dimension {p.dim}")
    return p.with_terminal(p.terminal + h)


def align(op, p: DiscretePath, q: DiscretePath):
    """Semigroup-extend both paths to the common horizon and refine to the
    union grid.  Returns (grid, p_values, q_values)."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    r = max(p.horizon, q.horizon)
    pe = extend_semigroup(op, p, r)
    qe = extend_semigroup(op, q, r)
    grid = np.union1d(pe.grid, qe.grid)
    return grid, pe.values_on(grid), qe.values_on(grid)


def difference_path(op, p: DiscretePath, q: DiscretePath) -> DiscretePath:
    """The aligned difference eta^A - gamma^A on the union grid."""
    grid, pv, qv = align(op, p, q)
    return DiscretePath(grid, qv - pv)


def metric_d_infty(op, p: DiscretePath, q: DiscretePath) -> float:
    """d_infty = |t - s| + sup norm of the difference of semigroup extensions."""
    diff = difference_path(op, p, q)
    return abs(p.horizon - q.horizon) + sup_norm(diff)


@dataclass
class PathFunctional:
    """A real functional of paths with a declared polynomial growth envelope
    |f(gamma)| <= growth_const * (1 + |gamma|_0^growth_exp)."""

    fn: Callable[[DiscretePath], float]
    growth_const: float = 1.0
    growth_exp: float = 2.0
    name: str = ""

    def __call__(self, p: DiscretePath) -> float:
        return float(self.fn(p))

    def spot_check_growth(self, paths) -> bool:
        """Check the growth envelope on the given sample paths."""
        for p in paths:
            if abs(self(p)) > self.growth_const * (1.0 + sup_norm(p) ** self.growth_exp) + 1e-9:
                return False
        return True


@dataclass
class DupireDerivatives:
    dt: float
    dx: np.ndarray
    dxx: np.ndarray
    conditioning_warning: bool = False
    final_time_rule: bool = False


def dupire_derivatives(f, p: DiscretePath, h_time: float | None = None,
                       h_space: float | None = None,
                       at_final_time: bool = False,
                       total_time: float | None = None) -> DupireDerivatives:
    """Finite-difference estimators of the pathwise derivatives of f at p.

    The horizontal derivative uses the one-sided flat-extension quotient
    (O(h_time)); the vertical derivatives use central differences of terminal
    bumps (O(h_space^2) on functionals with three continuous vertical
    derivatives).  At the final time the horizontal derivative is defined by
    a left limit; pass ``at_final_time=True`` to evaluate the one-sided rule
    on the restriction to [0, t - h_time] instead.
    """
    T = total_time if total_time is not None else max(p.horizon, 1.0)
    if h_time is None:
        h_time = 1e-4 * T
    if h_space is None:
        h_space = 1e-4 * (1.0 + sup_norm(p))
    if h_time <= 0 or h_space <= 0:
        raise ValueError("finite-difference steps must be positive")

    f0 = float(f(p))
    if at_final_time:
        base = p.restrict(p.horizon - h_time)
        dt = (float(f(extend_flat(base, p.horizon))) - float(f(base))) / h_time
    else:
        dt = (float(f(extend_flat(p, p.horizon + h_time))) - f0) / h_time

    n = p.dim
    dx = np.zeros(n)
    dxx = np.zeros((n, n))
    fp = np.zeros(n)
    fm = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h_space
        fp[i] = float(f(vertical_bump(p, e)))
        fm[i] = float(f(vertical_bump(p, -e)))
        dx[i] = (fp[i] - fm[i]) / (2.0 * h_space)
        dxx[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h_space**2
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros(n)
            e[i] = h_space
            e[j] = h_space
            fpp = float(f(vertical_bump(p, e)))
            e[j] = -h_space
            fpm = float(f(vertical_bump(p, e)))
            e[i] = -h_space
            fmm = float(f(vertical_bump(p, e)))
            e[j] = h_space
            fmp = float(f(vertical_bump(p, e)))
            dxx[i, j] = dxx[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h_space**2)

    # cancellation heuristic: second differences below the round-off floor
    scale = max(abs(f0), np.max(np.abs(fp)), np.max(np.abs(fm)), 1e-300)
    ill = h_space**2 * (np.max(np.abs(dxx)) + 1e-300) < 64.0 * np.finfo(float).eps * scale
    if ill:
        warnings.warn(
            f"vertical step {h_space:g} leaves second differences at round-off level",
            ConditioningWarning,
        )
    return DupireDerivatives(dt, dx, dxx, conditioning_warning=bool(ill),
                             final_time_rule=at_final_time)


def path_to_json(p: DiscretePath) -> str:
    return json.dumps({"grid": p.grid.tolist(), "values": p.values.tolist()})


def path_from_json(text: str) -> DiscretePath:
    data = json.loads(text)
    if not isinstance(data, dict) or "grid" not in data or "values" not in data:
        raise ValueError('path JSON must be {"grid": [...], "values": [[...], ...]}')
    return DiscretePath(np.asarray(data["grid"], dtype=float),
                        np.asarray(data["values"], dtype=float))
