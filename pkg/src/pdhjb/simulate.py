"""Monte Carlo simulation of controlled stochastic evolution equations in
mild form.

The scheme is exponential Euler: the semigroup factor over one step is exact
(the generator is diagonal), so

    X_{k+1} = e^{dt A} [ X_k + F(X_{<=k}, u_k) dt + G(X_{<=k}, u_k) dW_k ].

Noise is a truncated cylindrical process: K independent scalar Brownian
motions, with G mapping K columns into the state space.  Increments for
sample i are drawn from a counter-based generator keyed by (seed, i), so an
ensemble is reproducible and independent of evaluation order, and supplying
the same seed couples simulations (common random numbers).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gauge import (EpsGaugeParams, GaugeParams, grad_coef_eps_stats,
                    grad_coef_stats, hess_coef_eps_stats, hess_coef_stats,
                    upsilon_eps_stats, upsilon_stats)
from .paths import DiscretePath, sup_norm

__all__ = [
    "NoiseSpec",
    "ControlProblem",
    "PathBatch",
    "SdeEnsemble",
    "SimulationDivergedError",
    "TerminalPowerParams",
    "ItoCheckReport",
    "noise_increments",
    "simulate_mild",
    "simulate_yosida",
    "ito_inequality_check",
    "derive_seed",
]

_TOL = 1e-12


class SimulationDivergedError(RuntimeError):
    """Non-finite state encountered during time stepping."""

    def __init__(self, step: int, time: float):
        super().__init__(f"simulation diverged at step {step} (t = {time:g})")
        self.step = step
        self.time = time


def derive_seed(seed: int, *tags) -> int:
    """Deterministically derive a sub-seed from a base seed and tags
    (splitmix64-style mixing; stable across platforms)."""
    z = np.uint64(seed)
    for tag in tags:
        t = np.uint64(abs(hash(str(tag))) & 0xFFFFFFFFFFFFFFFF)
        with np.errstate(over="ignore"):
            z = np.uint64(z + np.uint64(0x9E3779B97F4A7C15) + t)
            z = np.uint64((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9))
            z = np.uint64((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB))
            z = np.uint64(z ^ (z >> np.uint64(31)))
    return int(z)


def noise_increments(seed: int, n_samples: int, n_steps: int, noise_dim: int,
                     dt: float) -> np.ndarray:
    """Brownian increments, shape (n_samples, n_steps, noise_dim).

    Sample i draws its whole stream from a Philox generator keyed by
    (seed, i); order of samples never matters.
    """
    out = np.empty((n_samples, n_steps, noise_dim))
    root = np.sqrt(dt)
    for i in range(n_samples):
        key = (int(seed) << 64) | i
        gen = np.random.Generator(np.random.Philox(key=key))
        out[i] = gen.standard_normal((n_steps, noise_dim))
    out *= root
    return out


@dataclass(frozen=True)
class NoiseSpec:
    """Truncated cylindrical noise: rank, seed and step size."""

    noise_dim: int
    seed: int
    dt: float

    def __post_init__(self):
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def steps_for(self, span: float) -> int:
        steps = round(span / self.dt)
        if abs(steps * self.dt - span) > 1e-12 * max(1.0, span) or steps < 1:
            raise ValueError(f"dt = {self.dt} does not divide the window {span}")
        return int(steps)


@dataclass
class PathBatch:
    """Running view of an ensemble of path prefixes handed to coefficients.

    ``x`` is the current value per sample, ``sup_norm`` the running sup norm
    of the whole history, ``integral`` the running left-rectangle integral
    of the state.  ``values`` / ``grid`` expose the full history when the
    simulation retains it.
    """

    t: float
    x: np.ndarray              # (M, N)
    sup_norm: np.ndarray       # (M,)
    integral: np.ndarray       # (M, N)
    values: np.ndarray | None = None   # (M, k+1, N) history if retained
    grid: np.ndarray | None = None

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_path(cls, p: DiscretePath, n_samples: int = 1) -> "PathBatch":
        x = np.tile(p.terminal, (n_samples, 1))
        s = np.full(n_samples, sup_norm(p))
        seg = np.diff(p.grid)
        integ = (p.values[:-1] * seg[:, None]).sum(axis=0) if seg.size else np.zeros(p.dim)
        return cls(t=p.horizon, x=x, sup_norm=s,
                   integral=np.tile(integ, (n_samples, 1)),
                   values=np.tile(p.values, (n_samples, 1, 1)),
                   grid=p.grid.copy())


@dataclass
class ControlProblem:
    """Coefficients of the controlled evolution equation and its utility.

    F(batch, u) -> (M, N) drift; G(batch, u) -> (M, N, K) noise loading;
    q(batch, y, z, u) -> (M,) driver; phi(batch) -> (M,) terminal value.
    ``lipschitz`` is the declared constant of the growth/Lipschitz envelopes;
    ``control_space`` the finite list of admissible control points.  Set
    ``q_depends_yz=False`` when the driver ignores (y, z); the cost layer can
    then use the plain Monte Carlo mean, which coincides with the recursive
    value by the tower property.
    """

    F: Callable
    G: Callable
    q: Callable
    phi: Callable
    lipschitz: float
    control_space: list
    noise_dim: int = 1
    q_depends_yz: bool = True

    def spot_check_growth(self, batches, controls=None, tol: float = 1e-9) -> bool:
        """Linear-growth envelope |F|^2 v |G|^2 <= L^2 (1 + |gamma|_0^2) on
        sample inputs."""
        controls = controls if controls is not None else self.control_space
        L2 = self.lipschitz**2
        for b in batches:
            bound = L2 * (1.0 + b.sup_norm**2)
            for u in controls:
                if np.any(np.sum(self.F(b, u) ** 2, axis=1) > bound + tol):
                    return False
                g = self.G(b, u)
                if np.any(np.sum(g**2, axis=(1, 2)) > bound + tol):
                    return False
        return True


@dataclass
class SdeEnsemble:
    """Simulated sample paths on one grid, plus the metadata needed to
    reproduce the driving noise exactly."""

    grid: np.ndarray           # (n_total,)
    values: np.ndarray         # (M, n_total, N)
    t_index: int               # index of the simulation start time in grid
    control: object
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1 - self.t_index

    @property
    def start_time(self) -> float:
        return float(self.grid[self.t_index])

    def path(self, i: int) -> DiscretePath:
        return DiscretePath(self.grid, self.values[i])

    def noise_increments(self) -> np.ndarray:
        return noise_increments(self.meta["seed"], self.n_samples, self.n_steps,
                                self.meta["noise_dim"], self.meta["dt"])

    def running_stats(self):
        """(sup_norms, integrals) with shape (M, n_total[, N]); entry k holds
        the running statistic of the prefix up to grid[k]."""
        norms = np.linalg.norm(self.values, axis=2)
        sups = np.maximum.accumulate(norms, axis=1)
        seg = np.diff(self.grid)
        contrib = self.values[:, :-1, :] * seg[None, :, None]
        integrals = np.zeros_like(self.values)
        integrals[:, 1:, :] = np.cumsum(contrib, axis=1)
        return sups, integrals

    def batch_at(self, k: int, sups=None, integrals=None,
                 with_history: bool = False) -> PathBatch:
        """PathBatch view of the prefixes up to absolute grid index k."""
        if sups is None or integrals is None:
            sups, integrals = self.running_stats()
        return PathBatch(
            t=float(self.grid[k]), x=self.values[:, k, :],
            sup_norm=sups[:, k], integral=integrals[:, k, :],
            values=self.values[:, :k + 1, :] if with_history else None,
            grid=self.grid[:k + 1] if with_history else None)

    def save(self, path) -> None:
        np.savez_compressed(path, grid=self.grid, values=self.values,
                            t_index=np.array([self.t_index]),
                            meta=np.frombuffer(
                                json.dumps(self.meta, sort_keys=True).encode(),
                                dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "SdeEnsemble":
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
        return cls(grid=data["grid"], values=data["values"],
                   t_index=int(data["t_index"][0]), control=None, meta=meta)


def _simulate(op, problem: ControlProblem, initial: DiscretePath, control,
              noise: NoiseSpec, samples: int, scheme: str) -> SdeEnsemble:
    t0 = initial.horizon
    t_end = control.end
    if t_end < t0 - _TOL:
        raise ValueError(f"control window ends at {t_end} before the initial horizon {t0}")
    if initial.dim != op.dim:
        raise ValueError(f"initial path dimension {initial.dim} != operator dimension {op.dim}")
    steps = noise.steps_for(t_end - t0)
    dt = noise.dt
    dw = noise_increments(noise.seed, samples, steps, noise.noise_dim, dt)

    n_init = initial.grid.size
    grid = np.concatenate([initial.grid, t0 + dt * np.arange(1, steps + 1)])
    values = np.empty((samples, n_init + steps, initial.dim))
    values[:, :n_init, :] = initial.values[None, :, :]

    batch = PathBatch.from_path(initial, samples)
    batch.values = values
    batch.grid = grid
    x = batch.x.copy()
    for k in range(steps):
        t_k = t0 + k * dt
        u = control.value_at(t_k)
        drift = problem.F(batch, u)
        load = problem.G(batch, u)
        incr = x + drift * dt + np.einsum("mnk,mk->mn", load, dw[:, k, :])
        x = op.semigroup_apply(dt, incr)
        if not np.all(np.isfinite(x)):
            raise SimulationDivergedError(k, t_k + dt)
        values[:, n_init + k, :] = x
        batch.t = t_k + dt
        batch.x = x
        batch.sup_norm = np.maximum(batch.sup_norm, np.linalg.norm(x, axis=1))
        batch.integral = batch.integral + values[:, n_init + k - 1, :] * dt
        batch.values = values[:, :n_init + k + 1, :]
        batch.grid = grid[:n_init + k + 1]

    meta = {"seed": int(noise.seed), "dt": float(dt), "scheme": scheme,
            "noise_dim": int(noise.noise_dim),
            "control_label": getattr(control, "label", "")}
    return SdeEnsemble(grid=grid, values=values, t_index=n_init - 1,
                       control=control, meta=meta)


def simulate_mild(op, problem: ControlProblem, initial: DiscretePath, control,
                  noise: NoiseSpec, samples: int) -> SdeEnsemble:
    """Exponential-Euler ensemble of the mild solution started from
    ``initial`` under the given control."""
    return _simulate(op, problem, initial, control, noise, samples, "exp_euler")


def simulate_yosida(op, problem: ControlProblem, initial: DiscretePath, control,
                    noise: NoiseSpec, samples: int, mu: float) -> SdeEnsemble:
    """Same scheme with the generator replaced by its Yosida approximation;
    the same seed reuses the same noise stream."""
    ens = _simulate(op.yosida_operator(mu), problem, initial, control, noise,
                    samples, f"exp_euler_yosida(mu={mu:g})")
    ens.meta["mu"] = float(mu)
    return ens


def replay_coefficients(ensemble: SdeEnsemble, problem: ControlProblem):
    """Yield (k, t_k, batch_k, u_k) for each simulation step of a stored
    ensemble, with batch_k the prefix view the coefficients saw."""
    sups, integrals = ensemble.running_stats()
    for k in range(ensemble.n_steps):
        idx = ensemble.t_index + k
        t_k = float(ensemble.grid[idx])
        batch = ensemble.batch_at(idx, sups, integrals)
        yield k, t_k, batch, ensemble.control.value_at(t_k)


# ---------------------------------------------------------------------------
# pathwise Ito inequality for the gauge functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TerminalPowerParams:
    """Selects the |terminal value|^{2m} variant of the Ito comparison."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")


@dataclass
class ItoCheckReport:
    mean_gap: float
    stderr: float
    n_samples: int
    variant: str
    max_abs_gap: float

    @property
    def passed(self) -> bool:
        return self.mean_gap <= 3.0 * self.stderr + 1e-12


def _gauge_value_grad_hess(params, a, x):
    """Dispatch value / gradient coefficient / hessian coefficients for the
    three admissible penalty families, from batched (sup, terminal) stats."""
    x_abs = np.linalg.norm(x, axis=-1)
    if isinstance(params, GaugeParams):
        if params.m < 2:
            raise ValueError("the smooth-gauge Ito inequality requires m >= 2")
        params.require_gauge_type()
        val = upsilon_stats(params, a, x_abs)
        cg = grad_coef_stats(params, a, x_abs)
        c_outer, c_id = hess_coef_stats(params, a, x_abs)
    elif isinstance(params, EpsGaugeParams):
        val = upsilon_eps_stats(params, a, x_abs)
        cg = grad_coef_eps_stats(params, a, x_abs)
        c_outer, c_id = hess_coef_eps_stats(params, a, x_abs)
    elif isinstance(params, TerminalPowerParams):
        m = params.m
        val = x_abs ** (2 * m)
        pw = np.power(x_abs, 2 * m - 2) if m > 1 else np.ones_like(x_abs)
        cg = 2 * m * pw
        c_id = 2 * m * pw
        if m > 1:
            c_outer = 4 * m * (m - 1) * np.power(x_abs, 2 * m - 4)
        else:
            c_outer = np.zeros_like(x_abs)
    else:
        raise TypeError(f"unsupported penalty parameters {type(params).__name__}")
    return val, cg, c_outer, c_id


def ito_inequality_check(op, problem: ControlProblem, initial: DiscretePath,
                         anchor: DiscretePath, params,
                         ensemble: SdeEnsemble) -> ItoCheckReport:
    """Monte Carlo check of the pathwise inequality

        Pen(X_s - anchor^A_{t,s}) <= Pen(X_t - anchor) + drift/trace integral
                                      + stochastic integral,

    evaluated at the final time with the closed-form penalty derivatives on
    the left and the simulated increments on the right.  Reports the mean of
    LHS - RHS with its standard error; in expectation the mean should not
    exceed zero beyond Monte Carlo noise.
    """
    if abs(anchor.horizon - initial.horizon) > _TOL:
        raise ValueError("anchor horizon must match the initial-path horizon")
    if anchor.dim != initial.dim:
        raise ValueError("anchor dimension mismatch")

    t0 = initial.horizon
    dt = ensemble.meta["dt"]
    steps = ensemble.n_steps
    m_samples = ensemble.n_samples

    # prefix of the difference path: gamma - anchor on [0, t]
    pre_grid = np.union1d(initial.grid, anchor.grid)
    pre_diff = initial.values_on(pre_grid) - anchor.values_on(pre_grid)
    sup_prefix = float(np.max(np.linalg.norm(pre_diff, axis=1)))

    # anchor flowed to each simulation grid time
    times = t0 + dt * np.arange(steps + 1)
    flowed = np.stack([op.semigroup_apply(s - t0, anchor.terminal) for s in times])

    y = np.tile(initial.terminal - anchor.terminal, (m_samples, 1))
    run_sup = np.full(m_samples, sup_prefix)
    run_sup = np.maximum(run_sup, np.linalg.norm(y, axis=1))

    val0, _, _, _ = _gauge_value_grad_hess(params, run_sup, y)
    rhs = val0.copy()
    dw = ensemble.noise_increments()
    variant = type(params).__name__

    for k, t_k, batch, u in replay_coefficients(ensemble, problem):
        _, cg, c_outer, c_id = _gauge_value_grad_hess(params, run_sup, y)
        drift = problem.F(batch, u)
        load = problem.G(batch, u)
        gy = cg[:, None] * y
        gty = np.einsum("mnk,mn->mk", load, y)
        trace = c_outer * np.sum(gty**2, axis=1) + c_id * np.sum(load**2, axis=(1, 2))
        rhs += (np.sum(gy * drift, axis=1) + 0.5 * trace) * dt
        rhs += np.sum(gy * np.einsum("mnk,mk->mn", load, dw[:, k, :]), axis=1)
        y = ensemble.values[:, ensemble.t_index + k + 1, :] - flowed[k + 1]
        run_sup = np.maximum(run_sup, np.linalg.norm(y, axis=1))

    lhs, _, _, _ = _gauge_value_grad_hess(params, run_sup, y)
    gap = lhs - rhs
    stderr = float(np.std(gap, ddof=1) / np.sqrt(m_samples)) if m_samples > 1 else 0.0
    return ItoCheckReport(mean_gap=float(np.mean(gap)), stderr=stderr,
                          n_samples=m_samples, variant=variant,
                          max_abs_gap=float(np.max(np.abs(gap))))
