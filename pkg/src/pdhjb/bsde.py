"""Least-squares Monte Carlo solver for the backward equation defining the
recursive utility (Y, Z) on a simulated ensemble.

Backward in time, the martingale-increment regression

    Z_k ~ E[ Y_{k+1} dW_k / dt | features_k ],
    Y_k ~ E[ Y_{k+1} + q(X_{<=k}, Y_{k+1}, Z_k, u_k) dt | features_k ]

is run cross-sectionally over the ensemble; all conditional expectations are
regressions on a path-feature basis (degree-2 polynomials in the terminal
coordinates plus the running sup norm and running integral), which keeps the
non-Markovian dependence visible to the solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .paths import ConditioningWarning
from .simulate import ControlProblem, PathBatch, SdeEnsemble

__all__ = [
    "BsdeSpec",
    "BsdeSolution",
    "ComparisonReport",
    "PicardDivergedError",
    "default_basis",
    "solve_regression",
    "solve_picard",
    "comparison_check",
]

RIDGE = 1e-8


class PicardDivergedError(RuntimeError):
    pass


@dataclass
class BsdeSpec:
    """Driver, terminal condition and declared Lipschitz constant.

    ``q(batch, y, z, u) -> (M,)`` and ``phi(batch) -> (M,)`` follow the
    coefficient conventions of the simulation layer.  The value process Y is
    real-valued (the control problem's case).
    """

    q: Callable
    phi: Callable
    lipschitz: float
    q_depends_yz: bool = True

    @classmethod
    def from_problem(cls, problem: ControlProblem) -> "BsdeSpec":
        return cls(q=problem.q, phi=problem.phi, lipschitz=problem.lipschitz,
                   q_depends_yz=problem.q_depends_yz)

    def spot_check_driver_lipschitz(self, batch: PathBatch, u, rng,
                                    n_trials: int = 16, tol: float = 1e-9) -> bool:
        """Lipschitz envelope of the driver in (y, z) with the declared L."""
        m = batch.n_samples
        for _ in range(n_trials):
            y1, y2 = rng.normal(size=(2, m))
            z1, z2 = rng.normal(size=(2, m, 1))
            lhs = np.abs(self.q(batch, y1, z1, u) - self.q(batch, y2, z2, u))
            rhs = self.lipschitz * (np.abs(y1 - y2)
                                    + np.linalg.norm(z1 - z2, axis=1))
            if np.any(lhs > rhs + tol):
                return False
        return True


def default_basis(dim: int) -> Callable[[PathBatch], np.ndarray]:
    """Degree-2 polynomials in the terminal coordinates, the running sup
    norm and the running integral coordinates."""
    iu = np.triu_indices(dim)

    def features(batch: PathBatch) -> np.ndarray:
        x = batch.x
        quad = (x[:, :, None] * x[:, None, :])[:, iu[0], iu[1]]
        return np.concatenate(
            [np.ones((x.shape[0], 1)), x, quad,
             batch.sup_norm[:, None], batch.integral], axis=1)

    return features


def _fit(feats: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least-squares conditional-expectation proxy: fitted values of targets
    on feats.  Degenerate cross-sections (all rows equal, e.g. at the
    deterministic initial time) reduce to the plain mean; rank-deficient
    designs fall back to a declared ridge with a warning."""
    if np.ptp(feats, axis=0).max() < 1e-14:
        mean = targets.mean(axis=0)
        return np.broadcast_to(mean, targets.shape).copy()
    coef, _, rank, _ = np.linalg.lstsq(feats, targets, rcond=None)
    if rank < feats.shape[1]:
        warnings.warn(
            f"rank-deficient regression design (rank {rank} < {feats.shape[1]}); "
            f"refitting with ridge {RIDGE:g}", ConditioningWarning)
        gram = feats.T @ feats + RIDGE * np.eye(feats.shape[1])
        coef = np.linalg.solve(gram, feats.T @ targets)
    return feats @ coef


@dataclass
class BsdeSolution:
    """Per-sample value and martingale-integrand processes on the simulation
    window, with regression diagnostics."""

    times: np.ndarray          # (steps+1,)
    Y: np.ndarray              # (M, steps+1)
    Z: np.ndarray              # (M, steps, K)
    y0_value: float
    y0_stderr: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.Y.shape[0]


def solve_regression(ensemble: SdeEnsemble, spec: BsdeSpec,
                     basis: Callable | None = None) -> BsdeSolution:
    """Backward least-squares scheme; the terminal condition is exact per
    sample."""
    if ensemble.n_samples == 0:
        raise ValueError("empty ensemble")
    basis = basis or default_basis(ensemble.dim)
    steps = ensemble.n_steps
    m = ensemble.n_samples
    dt = ensemble.meta["dt"]
    k_noise = ensemble.meta["noise_dim"]
    dw = ensemble.noise_increments()
    sups, integrals = ensemble.running_stats()

    times = ensemble.grid[ensemble.t_index:]
    Y = np.empty((m, steps + 1))
    Z = np.zeros((m, steps, k_noise))
    Y[:, steps] = spec.phi(ensemble.batch_at(ensemble.grid.size - 1, sups, integrals))

    max_normal_eq = 0.0
    y0_stderr = 0.0
    for k in range(steps - 1, -1, -1):
        idx = ensemble.t_index + k
        batch = ensemble.batch_at(idx, sups, integrals)
        feats = basis(batch)
        Z[:, k, :] = _fit(feats, Y[:, k + 1][:, None] * dw[:, k, :] / dt)
        u = ensemble.control.value_at(float(times[k]))
        target = Y[:, k + 1] + spec.q(batch, Y[:, k + 1], Z[:, k, :], u) * dt
        Y[:, k] = _fit(feats, target)
        resid = target - Y[:, k]
        max_normal_eq = max(max_normal_eq, float(np.max(np.abs(feats.T @ resid)) / m))
        if k == 0:
            y0_stderr = float(np.std(target, ddof=1) / np.sqrt(m)) if m > 1 else 0.0

    return BsdeSolution(times=times, Y=Y, Z=Z,
                        y0_value=float(np.mean(Y[:, 0])), y0_stderr=y0_stderr,
                        diagnostics={"max_normal_eq_violation": max_normal_eq})


def solve_picard(ensemble: SdeEnsemble, spec: BsdeSpec,
                 basis: Callable | None = None, iterations: int = 8,
                 tol: float = 0.0) -> BsdeSolution:
    """Fixed-point alternative: repeat the backward regressions with the
    driver frozen at the previous iterate's (Y, Z).  Cross-validates
    solve_regression; the iterate gap contracts geometrically when L*dt is
    small."""
    basis = basis or default_basis(ensemble.dim)
    steps = ensemble.n_steps
    m = ensemble.n_samples
    dt = ensemble.meta["dt"]
    k_noise = ensemble.meta["noise_dim"]
    dw = ensemble.noise_increments()
    sups, integrals = ensemble.running_stats()
    times = ensemble.grid[ensemble.t_index:]

    terminal = spec.phi(ensemble.batch_at(ensemble.grid.size - 1, sups, integrals))
    feats_all = [basis(ensemble.batch_at(ensemble.t_index + k, sups, integrals))
                 for k in range(steps)]

    Y_prev = np.zeros((m, steps + 1))
    Z_prev = np.zeros((m, steps, k_noise))
    gaps = []
    grew = 0
    solution = None
    y0_stderr = 0.0
    for _ in range(iterations):
        Y = np.empty((m, steps + 1))
        Z = np.zeros((m, steps, k_noise))
        Y[:, steps] = terminal
        for k in range(steps - 1, -1, -1):
            feats = feats_all[k]
            Z[:, k, :] = _fit(feats, Y[:, k + 1][:, None] * dw[:, k, :] / dt)
            u = ensemble.control.value_at(float(times[k]))
            q_frozen = spec.q(ensemble.batch_at(ensemble.t_index + k, sups, integrals),
                              Y_prev[:, k + 1], Z_prev[:, k, :], u)
            target = Y[:, k + 1] + q_frozen * dt
            Y[:, k] = _fit(feats, target)
            if k == 0:
                y0_stderr = float(np.std(target, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        gap = float(np.max(np.abs(Y - Y_prev)))
        gaps.append(gap)
        if len(gaps) >= 2 and gaps[-1] > gaps[-2]:
            grew += 1
            if grew >= 3:
                raise PicardDivergedError(f"iterate gap grew 3 times: {gaps}")
        else:
            grew = 0
        Y_prev, Z_prev = Y, Z
        solution = BsdeSolution(times=times, Y=Y, Z=Z,
                                y0_value=float(np.mean(Y[:, 0])),
                                y0_stderr=y0_stderr,
                                diagnostics={"picard_gaps": list(gaps)})
        if gap <= tol:
            break
    return solution


@dataclass
class ComparisonReport:
    passed: bool
    min_margin: float
    times: np.ndarray
    mean_diff: np.ndarray
    stderr_diff: np.ndarray


def comparison_check(ensemble: SdeEnsemble, spec1: BsdeSpec, spec2: BsdeSpec,
                     basis: Callable | None = None) -> ComparisonReport:
    """Ordered data must give ordered values: with phi1 >= phi2 per sample
    and q1 >= q2 along the second solution, the first value dominates at
    every grid time up to Monte Carlo noise."""
    sups, integrals = ensemble.running_stats()
    term_batch = ensemble.batch_at(ensemble.grid.size - 1, sups, integrals)
    phi1 = spec1.phi(term_batch)
    phi2 = spec2.phi(term_batch)
    bad = np.nonzero(phi1 < phi2 - 1e-12)[0]
    if bad.size:
        raise ValueError(f"terminal ordering violated at sample {bad[0]}")

    sol1 = solve_regression(ensemble, spec1, basis)
    sol2 = solve_regression(ensemble, spec2, basis)

    dt = ensemble.meta["dt"]
    for k in range(ensemble.n_steps):
        batch = ensemble.batch_at(ensemble.t_index + k, sups, integrals)
        u = ensemble.control.value_at(float(sol1.times[k]))
        d = (spec1.q(batch, sol2.Y[:, k + 1], sol2.Z[:, k, :], u)
             - spec2.q(batch, sol2.Y[:, k + 1], sol2.Z[:, k, :], u))
        bad = np.nonzero(d < -1e-12)[0]
        if bad.size:
            raise ValueError(f"driver ordering violated at sample {bad[0]}, step {k}")

    diff = sol1.Y - sol2.Y
    mean_diff = diff.mean(axis=0)
    m = ensemble.n_samples
    stderr = diff.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean_diff)
    margin = mean_diff + 3.0 * stderr
    return ComparisonReport(passed=bool(np.all(margin >= -1e-12)),
                            min_margin=float(margin.min()),
                            times=sol1.times, mean_diff=mean_diff,
                            stderr_diff=stderr)
