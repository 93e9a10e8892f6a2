"""Smooth gauge functionals on path space with closed-form vertical
derivatives.

The family S_m / Upsilon^{m,M} measures how far a path's terminal value sits
below its running maximum; it is equivalent to |.|_0^{2m} (sandwich bound)
while staying twice vertically differentiable, which is what makes it usable
as a penalty inside variational and viscosity arguments.  Upsilon^eps is the
regularized m = 1 variant with uniformly bounded derivatives.

Everything here is a pure function of (sup norm, terminal value); the
``*_stats`` variants accept batched arrays and are what the simulation layer
calls in bulk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import SpectralOperator
from .paths import DiscretePath, align, difference_path, sup_norm

__all__ = [
    "GaugeParams",
    "EpsGaugeParams",
    "eval_sm",
    "eval_upsilon",
    "eval_upsilon_two",
    "grad_upsilon",
    "hess_upsilon",
    "eval_upsilon_eps",
    "grad_upsilon_eps",
    "hess_upsilon_eps",
    "eval_bar_upsilon",
    "eval_bar_upsilon_pair",
    "check_subadditivity",
    "g_convexity_min",
    "upsilon_stats",
    "grad_coef_stats",
    "hess_coef_stats",
]

# below this sup norm the singular branch of the closed forms applies
ZERO_NORM_THRESHOLD = 1e-300


@dataclass(frozen=True)
class GaugeParams:
    """Exponent m >= 1 and weight M of the terminal-value term.

    Gauge-type and subadditivity statements additionally require M >= 3;
    that is enforced at the call sites that rely on them.
    """

    m: int
    M: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))

    def require_gauge_type(self):
        if self.M < 3.0:
            raise ValueError(f"gauge-type use requires M >= 3, got M={self.M}")


@dataclass(frozen=True)
class EpsGaugeParams:
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def _stats(p: DiscretePath):
    return sup_norm(p), p.terminal


def _pow(x, k):
    # 0**0 == 1 keeps the m = 1 / m = 2 exponent-zero branches exact
    return np.power(x, k) if k != 0 else np.ones_like(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# S_m and Upsilon^{m,M}
# ---------------------------------------------------------------------------

def sm_stats(params: GaugeParams, a, x_abs):
    """S_m from the sup norm ``a`` and terminal magnitude ``x_abs``."""
    a = np.asarray(a, dtype=float)
    x_abs = np.asarray(x_abs, dtype=float)
    m = params.m
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (a ** (2 * m) - x_abs ** (2 * m)) ** 3 / a ** (4 * m)
    return np.where(a > ZERO_NORM_THRESHOLD, val, 0.0)


def upsilon_stats(params: GaugeParams, a, x_abs):
    """Upsilon^{m,M} = S_m + M |terminal|^{2m}."""
    return sm_stats(params, a, x_abs) + params.M * np.asarray(x_abs, dtype=float) ** (2 * params.m)


def eval_sm(params: GaugeParams, p: DiscretePath) -> float:
    a, x = _stats(p)
    return float(sm_stats(params, a, np.linalg.norm(x)))


def eval_upsilon(params: GaugeParams, p: DiscretePath) -> float:
    a, x = _stats(p)
    return float(upsilon_stats(params, a, np.linalg.norm(x)))


def eval_upsilon_two(params: GaugeParams, op: SpectralOperator,
                     p: DiscretePath, q: DiscretePath) -> float:
    """Two-path form: Upsilon of the semigroup-aligned difference path."""
    return eval_upsilon(params, difference_path(op, p, q))


def grad_coef_stats(params: GaugeParams, a, x_abs):
    """Scalar c(a, |x|) with grad Upsilon = c * x  (zero when a = 0)."""
    a = np.asarray(a, dtype=float)
    x_abs = np.asarray(x_abs, dtype=float)
    m, M = params.m, params.M
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = a ** (2 * m) - x_abs ** (2 * m)
        frac = (a ** (4 * m) - delta**2) / a ** (4 * m)
        xpow = _pow(x_abs, 2 * m - 2)
        c = 6 * m * frac * xpow + 2 * m * (M - 3.0) * xpow
    return np.where(a > ZERO_NORM_THRESHOLD, c, 0.0)


def hess_coef_stats(params: GaugeParams, a, x_abs):
    """Coefficients (c_outer, c_id) with

        hess Upsilon = c_outer * x x^T + c_id * I,

    both zero when a = 0.  Requires m >= 2 (the m = 1 second derivative is
    not continuous at the zero path)."""
    if params.m < 2:
        raise ValueError("second derivative requires m >= 2")
    a = np.asarray(a, dtype=float)
    x_abs = np.asarray(x_abs, dtype=float)
    m, M = params.m, params.M
    with np.errstate(divide="ignore", invalid="ignore"):
        a4 = a ** (4 * m)
        delta = a ** (2 * m) - x_abs ** (2 * m)
        comp = a4 - delta**2
        c_outer = (24 * m**2 * delta * _pow(x_abs, 4 * m - 4) / a4
                   + 12 * m * (m - 1) * comp * _pow(x_abs, 2 * m - 4) / a4
                   + 4 * m * (m - 1) * (M - 3.0) * _pow(x_abs, 2 * m - 4))
        c_id = (6 * m * comp * _pow(x_abs, 2 * m - 2) / a4
                + 2 * m * (M - 3.0) * _pow(x_abs, 2 * m - 2))
    keep = a > ZERO_NORM_THRESHOLD
    return np.where(keep, c_outer, 0.0), np.where(keep, c_id, 0.0)


def grad_upsilon(params: GaugeParams, p: DiscretePath) -> np.ndarray:
    a, x = _stats(p)
    return grad_coef_stats(params, a, np.linalg.norm(x)) * x


def hess_upsilon(params: GaugeParams, p: DiscretePath) -> np.ndarray:
    a, x = _stats(p)
    c_outer, c_id = hess_coef_stats(params, a, np.linalg.norm(x))
    return c_outer * np.outer(x, x) + c_id * np.eye(p.dim)


# ---------------------------------------------------------------------------
# Upsilon^eps
# ---------------------------------------------------------------------------

def upsilon_eps_stats(params: EpsGaugeParams, a, x_abs):
    a = np.asarray(a, dtype=float)
    x_abs = np.asarray(x_abs, dtype=float)
    return (a**2 - x_abs**2) ** 3 / (params.epsilon**2 + a**4) + 3.0 * x_abs**2


def grad_coef_eps_stats(params: EpsGaugeParams, a, x_abs):
    """Scalar c with grad Upsilon^eps = c * x."""
    a = np.asarray(a, dtype=float)
    x_abs = np.asarray(x_abs, dtype=float)
    return 6.0 - 6.0 * (a**2 - x_abs**2) ** 2 / (params.epsilon**2 + a**4)


def hess_coef_eps_stats(params: EpsGaugeParams, a, x_abs):
    """(c_outer, c_id) with hess Upsilon^eps = c_outer x x^T + c_id I."""
    a = np.asarray(a, dtype=float)
    x_abs = np.asarray(x_abs, dtype=float)
    denom = params.epsilon**2 + a**4
    d = a**2 - x_abs**2
    return 24.0 * d / denom, 6.0 - 6.0 * d**2 / denom


def eval_upsilon_eps(params: EpsGaugeParams, p: DiscretePath) -> float:
    a, x = _stats(p)
    return float(upsilon_eps_stats(params, a, np.linalg.norm(x)))


def grad_upsilon_eps(params: EpsGaugeParams, p: DiscretePath) -> np.ndarray:
    a, x = _stats(p)
    return grad_coef_eps_stats(params, a, np.linalg.norm(x)) * x


def hess_upsilon_eps(params: EpsGaugeParams, p: DiscretePath) -> np.ndarray:
    a, x = _stats(p)
    c_outer, c_id = hess_coef_eps_stats(params, a, np.linalg.norm(x))
    return c_outer * np.outer(x, x) + c_id * np.eye(p.dim)


# ---------------------------------------------------------------------------
# Gauge-type combinations and lemma-level checks
# ---------------------------------------------------------------------------

def eval_bar_upsilon(params: GaugeParams, op: SpectralOperator,
                     p: DiscretePath, q: DiscretePath) -> float:
    """Upsilon of the aligned difference plus the squared horizon gap."""
    return eval_upsilon_two(params, op, p, q) + (p.horizon - q.horizon) ** 2


def eval_bar_upsilon_pair(params: GaugeParams, op: SpectralOperator,
                          pair_a, pair_b) -> float:
    """Pair-space variant: sum of the two Upsilon terms plus the time gap
    squared.  Each argument is a tuple (path, path) sharing one horizon."""
    (p1, p2), (q1, q2) = pair_a, pair_b
    if abs(p1.horizon - p2.horizon) > 1e-12 or abs(q1.horizon - q2.horizon) > 1e-12:
        raise ValueError("pair members must share a horizon")
    return (eval_upsilon_two(params, op, p1, q1)
            + eval_upsilon_two(params, op, p2, q2)
            + (p1.horizon - q1.horizon) ** 2)


def check_subadditivity(params: GaugeParams, p: DiscretePath, q: DiscretePath,
                        tol: float = 1e-12) -> bool:
    """Whether Upsilon^{1/2m}(p + q) <= Upsilon^{1/2m}(p) + Upsilon^{1/2m}(q)."""
    params.require_gauge_type()
    if abs(p.horizon - q.horizon) > 1e-12:
        raise ValueError("subadditivity requires equal horizons")
    grid = np.union1d(p.grid, q.grid)
    total = DiscretePath(grid, p.values_on(grid) + q.values_on(grid))
    e = 1.0 / (2 * params.m)
    return (eval_upsilon(params, total) ** e
            <= eval_upsilon(params, p) ** e + eval_upsilon(params, q) ** e + tol)


def g_convexity_min(params: GaugeParams, grid_size: int = 10_000) -> float:
    """Minimum over [0, 1] of the exact second derivative of

        g(x) = (1 - x^{6m} + 3 x^{4m} + (M - 3) x^{2m})^{1/2m},

    evaluated from the expanded polynomial expression (not by differencing).
    Convexity of g is what makes the 1/2m-th root of Upsilon subadditive.
    """
    params.require_gauge_type()
    m, M = params.m, params.M
    x = np.linspace(0.0, 1.0, grid_size)
    g = (1.0 - x ** (6 * m) + 3.0 * x ** (4 * m) + (M - 3.0) * x ** (2 * m)) ** (1.0 / (2 * m))
    gpow = g ** (1 - 4 * m)
    poly1 = (2.0 * x ** (8 * m) - (2 * m + 7) * x ** (6 * m) + 6.0 * x ** (4 * m)
             - (6 * m - 1) * x ** (2 * m) + (8 * m - 2))
    poly2 = -(8 * m + 2) * x ** (6 * m) + (6 * m + 3) * x ** (4 * m) + (2 * m - 1)
    gpp = (3.0 * gpow * _pow(x, 4 * m - 2) * poly1
           + gpow * _pow(x, 2 * m - 2) * (M - 3.0) * poly2)
    return float(np.min(gpp))
