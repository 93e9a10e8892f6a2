"""Scenario pipelines: concrete control problems wired to the library
operations, each recording the inequalities it exercises.

The parabolic scenario instantiates a stochastic heat-type control problem
whose coefficients read the path through a bounded measure of the history
(Dirac at the current time or uniform over the past); the hyperbolic one
drives the first-order reformulation of a wave-type system on the product
space.  The Markovian benchmark cross-checks Monte Carlo, finite differences,
a quadrature dynamic program and the logarithmic-transform closed form.  The
quadratic-growth scenario runs the energy-ball domination test and fits the
time-Hoelder exponent of its value functional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gauge as _gauge
from .bsde import BsdeSpec, solve_regression
from .config import ExperimentConfig
from .control import (ControlProcess, cost_J, dpp_residual, shift_family,
                      value_enumerate)
from .gauge import EpsGaugeParams, GaugeParams
from .operators import SpectralOperator, WaveBlockOperator, make_operator
from .paths import DiscretePath, constant_path, extend_semigroup, sup_norm
from .simulate import (ControlProblem, NoiseSpec, PathBatch, derive_seed,
                       ito_inequality_check, simulate_mild, simulate_yosida)
from .viscosity import (FdGrid, HamiltonianSpec, MarkovianProblem,
                        SmoothFunctional, TestFunctional, classical_residual,
                        hopf_cole_oracle, markovian_dp_oracle,
                        markovian_fd_solve, tangency_check)

__all__ = ["run_scenario", "parabolic_problem", "hyperbolic_problem",
           "quadratic_growth_problem", "benchmark_markovian_problem",
           "hopf_cole_smooth", "ScenarioResult"]


@dataclass
class ScenarioResult:
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, **details) -> None:
        entry = {"name": name, "passed": bool(passed)}
        entry.update({k: _jsonable(v) for k, v in details.items()})
        self.checks.append(entry)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def build_operator(cfg: ExperimentConfig):
    if cfg.operator.eigenvalues is not None:
        return make_operator(eigenvalues=cfg.operator.eigenvalues)
    return make_operator(cfg.operator.preset, dim=cfg.operator.dim)


def constant_family(points, t0, t1):
    return [ControlProcess.constant(u, t0, t1, f"u={u:g}") for u in points]


# ---------------------------------------------------------------------------
# coefficient packs
# ---------------------------------------------------------------------------

def _history_functional(measure: str, horizon: float):
    """Bounded-measure read-out of the path history, in coefficients."""
    if measure == "dirac":
        return lambda batch: batch.x
    if measure == "uniform":
        return lambda batch: batch.integral / horizon
    raise ValueError(f"unknown measure preset {measure!r}")


def _sine_basis_quadrature(dim: int, n_quad: int = 16):
    """Gauss-Legendre nodes on (0, 1) and the sine-basis values there."""
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    k = np.arange(1, dim + 1)
    e_mat = math.sqrt(2.0) * np.sin(np.pi * nodes[:, None] * k[None, :])
    return nodes, weights, e_mat


def _sine_basis_integrals(dim: int) -> np.ndarray:
    k = np.arange(1, dim + 1, dtype=float)
    return math.sqrt(2.0) * (1.0 - np.cos(k * np.pi)) / (k * np.pi)


def parabolic_problem(op: SpectralOperator, noise_rank: int,
                      measure: str = "uniform", horizon: float = 1.0,
                      drift_gain: float = 0.3, noise_scale: float = 0.4,
                      reward_gain: float = 1.0, control_cost: float = 0.02,
                      control_points=(-1.0, 0.0, 1.0)) -> ControlProblem:
    """Heat-type controlled system: affine drift in the measure read-out of
    the history, diagonal trace-class noise, running reward linear in the
    read-out minus a quadratic control cost, and a Lipschitz terminal reward
    evaluated by spatial quadrature."""
    dim = op.dim
    m_of = _history_functional(measure, horizon)
    w_ctrl = np.zeros(dim)
    w_ctrl[0] = 1.0
    q_weights = noise_scale * np.sqrt(2.0 ** (1.0 - np.arange(1, noise_rank + 1)))
    load = np.zeros((dim, noise_rank))
    for j in range(min(dim, noise_rank)):
        load[j, j] = q_weights[j]
    w_int = _sine_basis_integrals(dim)
    _, quad_w, e_mat = _sine_basis_quadrature(dim)
    u_max = max(abs(float(u)) for u in control_points)

    def F(batch, u):
        return drift_gain * m_of(batch) + u * w_ctrl

    def G(batch, u):
        return np.broadcast_to(load, (batch.n_samples, dim, noise_rank))

    def q(batch, y, z, u):
        return (reward_gain * m_of(batch) @ w_int
                - control_cost * float(u) ** 2 * np.ones(batch.n_samples))

    def phi(batch):
        field_vals = m_of(batch) @ e_mat.T            # (M, n_quad)
        return (np.sqrt(1.0 + field_vals**2) - 1.0) @ quad_w

    lipschitz = math.sqrt(2.0) * max(drift_gain, noise_scale, reward_gain,
                                     1.0 + u_max)
    return ControlProblem(F=F, G=G, q=q, phi=phi, lipschitz=lipschitz,
                          control_space=list(control_points),
                          noise_dim=noise_rank, q_depends_yz=False)


def hyperbolic_problem(op: WaveBlockOperator, noise_rank: int,
                       measure: str = "uniform", horizon: float = 1.0,
                       drift_gain: float = 0.3, noise_scale: float = 0.3,
                       reward_gain: float = 0.5, control_cost: float = 0.5,
                       control_points=(-1.0, 0.0, 1.0)) -> ControlProblem:
    """Wave-type system in first-order form on stacked (position, velocity)
    coordinates (positions rescaled by mode frequency).  The forcing and the
    noise act on the velocity block; rewards read the position block through
    the history measure."""
    n_modes = op.omegas.size
    dim = op.dim
    w_int = _sine_basis_integrals(n_modes)
    _, quad_w, e_mat = _sine_basis_quadrature(n_modes)
    load = np.zeros((dim, noise_rank))
    q_weights = noise_scale * np.sqrt(2.0 ** (1.0 - np.arange(1, noise_rank + 1)))
    for j in range(min(n_modes, noise_rank)):
        load[2 * j + 1, j] = q_weights[j]
    w_ctrl = np.zeros(dim)
    w_ctrl[1] = 1.0

    def positions(arr):
        return arr[:, 0::2] / op.omegas

    def m_of(batch):
        if measure == "dirac":
            return positions(batch.x)
        return positions(batch.integral) / horizon

    def F(batch, u):
        out = np.zeros((batch.n_samples, dim))
        out[:, 1::2] = drift_gain * m_of(batch)
        return out + u * w_ctrl

    def G(batch, u):
        return np.broadcast_to(load, (batch.n_samples, dim, noise_rank))

    def q(batch, y, z, u):
        return (reward_gain * m_of(batch) @ w_int
                - control_cost * float(u) ** 2 * np.ones(batch.n_samples))

    def phi(batch):
        field_vals = m_of(batch) @ e_mat.T
        return (np.sqrt(1.0 + field_vals**2) - 1.0) @ quad_w

    u_max = max(abs(float(u)) for u in control_points)
    lipschitz = math.sqrt(2.0) * max(drift_gain, noise_scale, reward_gain,
                                     1.0 + u_max)
    return ControlProblem(F=F, G=G, q=q, phi=phi, lipschitz=lipschitz,
                          control_space=list(control_points),
                          noise_dim=noise_rank, q_depends_yz=False)


def quadratic_growth_problem(op: SpectralOperator, noise_rank: int,
                             nu1: float = 1.0, reward_bound: float = 0.5,
                             noise_scale: float = 0.15,
                             control_points=(0.0,)) -> ControlProblem:
    """Unbounded-control problem: reward at most -nu1/2 |u|^2 + L with a
    bounded state reward, Lipschitz-in-control drift."""
    dim = op.dim
    w = np.zeros(dim)
    w[0] = 1.0
    load = np.zeros((dim, noise_rank))
    for j in range(min(dim, noise_rank)):
        load[j, j] = noise_scale

    def F(batch, u):
        return u * np.broadcast_to(w, (batch.n_samples, dim)).copy()

    def G(batch, u):
        return np.broadcast_to(load, (batch.n_samples, dim, noise_rank))

    def q(batch, y, z, u):
        state = reward_bound * np.tanh(batch.x @ w)
        return state - 0.5 * nu1 * float(u) ** 2

    def phi(batch):
        return reward_bound * np.tanh(batch.x @ w)

    return ControlProblem(F=F, G=G, q=q, phi=phi, lipschitz=reward_bound,
                          control_space=list(control_points),
                          noise_dim=noise_rank, q_depends_yz=False)


def benchmark_markovian_problem(controls, phi, lam: float = 0.0,
                                horizon: float = 1.0,
                                relaxed: bool = False) -> MarkovianProblem:
    """One-mode benchmark: drift = control, unit noise, quadratic control
    cost; ``relaxed`` switches the reduced solver to the exact
    continuous-control Hamiltonian sup_u (u p - u^2/2) = p^2/2."""
    mp = MarkovianProblem(
        eigenvalues=np.array([lam]),
        fbar=lambda t, x, u: np.full_like(np.atleast_2d(x), u),
        gbar=lambda t, x, u: np.ones(np.atleast_2d(x).shape + (1,)),
        qbar=lambda t, x, r, z, u: np.full(np.atleast_2d(x).shape[0],
                                           -0.5 * float(u) ** 2),
        phibar=phi, controls=list(controls), lipschitz=1.0, horizon=horizon)
    if relaxed:
        mp.relaxed_quadratic = 1.0
    return mp


def hopf_cole_smooth(op, phi, dphi, d2phi, total_time, n_quad: int = 96):
    """Smooth functional for the continuous-control benchmark value with
    quadrature-side derivatives."""
    nodes, weights = np.polynomial.hermite.hermgauss(n_quad)
    weights = weights / math.sqrt(math.pi)

    def parts(t, x):
        x = float(np.atleast_1d(x)[0])
        span = max(total_time - t, 0.0)
        pts = x + math.sqrt(2.0 * span) * nodes
        e = np.exp(np.array([phi(p) for p in pts]))
        q0 = float(np.dot(weights, e))
        q1 = float(np.dot(weights, np.array([dphi(p) for p in pts]) * e))
        q2 = float(np.dot(weights,
                          np.array([d2phi(p) + dphi(p) ** 2 for p in pts]) * e))
        return q0, q1, q2

    def v(t, x):
        return math.log(parts(t, x)[0])

    def v_x(t, x):
        q0, q1, _ = parts(t, x)
        return np.array([q1 / q0])

    def v_xx(t, x):
        q0, q1, q2 = parts(t, x)
        return np.array([[q2 / q0 - (q1 / q0) ** 2]])

    def v_t(t, x, h=1e-6):
        return (v(min(t + h, total_time), x) - v(t - h, x)) / (
            min(t + h, total_time) - (t - h))

    return SmoothFunctional.from_state_function(op, v, v_t, v_x, v_xx)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def run_gauge_suite(cfg: ExperimentConfig) -> ScenarioResult:
    res = ScenarioResult()
    rng = np.random.default_rng(cfg.seed)
    n_sweep = int(cfg.scenario_params.get("sweep", 10_000))
    op = build_operator(cfg)

    def rand_path(dim=None):
        dim = dim or rng.integers(1, min(op.dim, 8) + 1)
        n = rng.integers(3, 9)
        grid = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, n - 2)), [1.0]])
        return DiscretePath(np.unique(grid), rng.uniform(-5, 5, (np.unique(grid).size, dim)))

    param_sets = [GaugeParams(2, 3.0), GaugeParams(3, 3.0), GaugeParams(3, 5.0)]

    worst_lo = worst_hi = 0.0
    for _ in range(n_sweep):
        p = rand_path()
        a, xn = sup_norm(p), float(np.linalg.norm(p.terminal))
        for params in param_sets:
            m, M = params.m, params.M
            u = _gauge.eval_upsilon(params, p)
            lo = a ** (2 * m) + (M - 3) * xn ** (2 * m)
            hi = 3 * a ** (2 * m) + (M - 3) * xn ** (2 * m)
            scale = max(abs(lo), abs(hi), 1.0)
            worst_lo = max(worst_lo, (lo - u) / scale)
            worst_hi = max(worst_hi, (u - hi) / scale)
    res.add("gauge_sandwich", worst_lo <= 1e-12 and worst_hi <= 1e-12,
            worst_below=worst_lo, worst_above=worst_hi, sweep=n_sweep)

    worst_grad = worst_hess = worst_bound = 0.0
    for eps in (0.1, 1.0):
        ep = EpsGaugeParams(eps)
        for _ in range(n_sweep // 4):
            p = rand_path()
            a, xn = sup_norm(p), float(np.linalg.norm(p.terminal))
            v = _gauge.eval_upsilon_eps(ep, p)
            worst_bound = max(worst_bound, max(a**2 - eps / 2, 0.0) - v,
                              v - 3 * a**2)
            g = float(np.linalg.norm(_gauge.grad_upsilon_eps(ep, p)))
            h = float(np.linalg.norm(_gauge.hess_upsilon_eps(ep, p), ord=2))
            worst_grad = max(worst_grad, g - 6 * xn)
            worst_hess = max(worst_hess, h - 30.0)
    res.add("upsilon_eps_bounds_and_caps",
            worst_bound <= 1e-12 and worst_grad <= 1e-12 and worst_hess <= 1e-12,
            worst_bound=worst_bound, worst_grad_cap=worst_grad,
            worst_hess_cap=worst_hess)

    from .paths import dupire_derivatives
    worst = 0.0
    n_der = int(cfg.scenario_params.get("derivative_paths", 100))
    for params in param_sets:
        done = 0
        while done < n_der:
            p = rand_path(dim=3)
            norms = np.linalg.norm(p.values, axis=1)
            prior = norms[:-1].max() if norms.size > 1 else 0.0
            if abs(norms[-1] - prior) < 2e-2 or norms[-1] < 2e-2:
                continue
            done += 1
            d = dupire_derivatives(lambda q: _gauge.eval_upsilon(params, q), p,
                                   h_space=2.5e-5 * (1 + sup_norm(p)))
            s, u = sup_norm(p), _gauge.eval_upsilon(params, p)
            eg = np.linalg.norm(d.dx - _gauge.grad_upsilon(params, p)) / (1 + u / (1 + s))
            eh = np.linalg.norm(d.dxx - _gauge.hess_upsilon(params, p)) / (1 + u / (1 + s) ** 2)
            worst = max(worst, eg, eh)
    for eps in (0.1, 1.0):
        ep = EpsGaugeParams(eps)
        done = 0
        while done < n_der:
            p = rand_path(dim=3)
            norms = np.linalg.norm(p.values, axis=1)
            prior = norms[:-1].max() if norms.size > 1 else 0.0
            if abs(norms[-1] - prior) < 2e-2 or norms[-1] < 2e-2:
                continue
            done += 1
            d = dupire_derivatives(lambda q: _gauge.eval_upsilon_eps(ep, q), p,
                                   h_space=2.5e-5 * (1 + sup_norm(p)))
            eg = np.linalg.norm(d.dx - _gauge.grad_upsilon_eps(ep, p)) / (
                1 + np.linalg.norm(_gauge.grad_upsilon_eps(ep, p)))
            eh = np.linalg.norm(d.dxx - _gauge.hess_upsilon_eps(ep, p)) / (
                1 + np.linalg.norm(_gauge.hess_upsilon_eps(ep, p)))
            worst = max(worst, eg, eh)
    res.add("derivative_oracle_agreement", worst <= 1e-5, worst_error=worst)

    ok = True
    for _ in range(n_sweep):
        p = rand_path(dim=2)
        q = DiscretePath(p.grid, rng.uniform(-5, 5, p.values.shape))
        params = param_sets[rng.integers(len(param_sets))]
        if params.M < 3:
            continue
        ok &= _gauge.check_subadditivity(params, p, q)
    min_gpp = min(_gauge.g_convexity_min(GaugeParams(m, M), 10_000)
                  for m in (1, 2, 3) for M in (3.0, 5.0))
    res.add("subadditivity_and_convexity", ok and min_gpp >= -1e-12,
            min_g_second_derivative=min_gpp, pairs=n_sweep)

    xs = np.linspace(0, 1, 201)
    res.plots["g_convexity.dat"] = np.column_stack([
        xs, [(1 - x**18 + 3 * x**12) ** (1 / 6) for x in xs]])
    return res


def _parabolic_setup(cfg: ExperimentConfig):
    op = build_operator(cfg)
    measure = cfg.scenario_params.get("measure", "uniform")
    problem = parabolic_problem(op, cfg.noise.rank, measure=measure,
                                horizon=cfg.horizon,
                                control_points=cfg.controls.points)
    initial = constant_path(
        np.array([1.0 / k for k in range(1, op.dim + 1)]), 0.0)
    return op, problem, initial


def run_parabolic(cfg: ExperimentConfig) -> ScenarioResult:
    res = ScenarioResult()
    op, problem, initial = _parabolic_setup(cfg)
    T = cfg.horizon
    noise = NoiseSpec(cfg.noise.rank, cfg.seed, cfg.noise.dt)
    family = constant_family(cfg.controls.points, 0.0, T)
    null = ControlProcess.constant(0.0, 0.0, T, "u=0")
    m_paths = cfg.samples.paths

    batch_probe = PathBatch.from_path(initial, 8)
    res.add("growth_envelope_spot_check",
            problem.spot_check_growth([batch_probe]))

    # pathwise inequality for the smooth gauge penalties (Monte Carlo)
    ens = simulate_mild(op, problem, initial, null, noise, m_paths)
    anchor = constant_path(0.5 * initial.terminal, 0.0)
    for params, tag in ((GaugeParams(3, 3.0), "smooth_gauge_m3"),
                        (EpsGaugeParams(0.5), "regularized_gauge"),):
        rep = ito_inequality_check(op, problem, initial, anchor, params, ens)
        res.add(f"ito_inequality_{tag}", rep.passed, mean_gap=rep.mean_gap,
                stderr=rep.stderr, samples=rep.n_samples)

    # zero-coefficient exactness
    zero_prob = parabolic_problem(op, cfg.noise.rank, measure="dirac",
                                  horizon=T, drift_gain=0.0, noise_scale=0.0,
                                  reward_gain=0.0, control_cost=0.0,
                                  control_points=[0.0])
    ens0 = simulate_mild(op, zero_prob, initial, null, noise, 8)
    rep0 = ito_inequality_check(op, zero_prob, initial, initial,
                                GaugeParams(3, 3.0), ens0)
    res.add("ito_inequality_zero_coefficients", rep0.max_abs_gap <= 1e-30,
            max_abs_gap=rep0.max_abs_gap)

    # generator approximation: shared noise, increasing accuracy parameter
    y_eigs = cfg.scenario_params.get("yosida_eigenvalues")
    y_op = (make_operator(eigenvalues=y_eigs) if y_eigs
            else make_operator(eigenvalues=-np.arange(1, 5.0) ** 2))
    y_prob = parabolic_problem(y_op, cfg.noise.rank, measure="uniform",
                               horizon=T, control_points=cfg.controls.points)
    y_init = constant_path(np.ones(y_op.dim), 0.0)
    y_samples = min(m_paths, 800)
    base = simulate_mild(y_op, y_prob, y_init, null, noise, y_samples)
    gaps = []
    for mu in (10.0, 100.0, 1000.0):
        approx = simulate_yosida(y_op, y_prob, y_init, null, noise,
                                 y_samples, mu=mu)
        sup_gap = np.linalg.norm(base.values - approx.values, axis=2).max(axis=1)
        gaps.append(float(np.mean(sup_gap**2)))
    res.add("yosida_convergence",
            gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-2 * gaps[0],
            gaps=gaps, mu_grid=[10.0, 100.0, 1000.0])
    res.plots["yosida_gaps.dat"] = np.column_stack([[10.0, 100.0, 1000.0], gaps])

    est = value_enumerate(op, problem, initial, family, noise,
                          min(m_paths, 4000))
    res.add("value_estimate_finite", np.isfinite(est.value),
            value=est.value, stderr=est.stderr, argmax=est.argmax)
    res.tables["per_control.csv"] = (
        ["label", "J", "stderr"],
        [[c.label, c.mean, c.stderr] for c in est.per_control])

    delta = cfg.scenario_params.get("dpp_delta", T / 4.0)
    rep = dpp_residual(op, problem, initial, family, delta, noise,
                       cfg.samples.outer, cfg.samples.inner)
    res.add("dpp_residual", rep.passed, lhs=rep.lhs, rhs=rep.rhs,
            residual=rep.residual, ci=rep.ci, bias_estimate=rep.bias_estimate,
            argmax=rep.argmax_outer, note=rep.note)
    return res


def run_hyperbolic(cfg: ExperimentConfig) -> ScenarioResult:
    res = ScenarioResult()
    n_modes = cfg.scenario_params.get("modes", min(cfg.operator.dim, 4))
    op = WaveBlockOperator(np.pi * np.arange(1, n_modes + 1))
    problem = hyperbolic_problem(op, cfg.noise.rank, horizon=cfg.horizon,
                                 control_points=cfg.controls.points)
    T = cfg.horizon
    noise = NoiseSpec(cfg.noise.rank, cfg.seed, cfg.noise.dt)
    null = ControlProcess.constant(0.0, 0.0, T, "u=0")

    rng = np.random.default_rng(cfg.seed)
    x = rng.normal(size=op.dim)
    iso = max(abs(np.linalg.norm(op.semigroup_apply(t, x)) - np.linalg.norm(x))
              for t in (0.1, 0.7, 1.3))
    res.add("semigroup_isometry", iso <= 1e-12 * (1 + np.linalg.norm(x)),
            worst_gap=iso)

    initial = constant_path(np.concatenate(
        [[1.0 / k, 0.0] for k in range(1, n_modes + 1)]), 0.0)
    m_paths = min(cfg.samples.paths, 2000)
    moments = []
    for dt in (cfg.noise.dt * 2, cfg.noise.dt):
        ens = simulate_mild(op, problem, initial,
                            null, NoiseSpec(cfg.noise.rank, cfg.seed, dt),
                            m_paths)
        sups = np.linalg.norm(ens.values, axis=2).max(axis=1)
        moments.append(float(np.mean(sups**2)))
    bound_ratio = [m / (1.0 + sup_norm(initial) ** 2) for m in moments]
    res.add("moment_bound_stable",
            all(np.isfinite(moments))
            and abs(bound_ratio[1] - bound_ratio[0]) <= 0.2 * max(bound_ratio),
            ratios=bound_ratio)

    # the wave semigroup is an isometry: the continuum inequality holds with
    # equality, so the discrete mean gap is pure O(dt) scheme bias; halving
    # dt and extrapolating removes it before applying the noise-level test
    reps = []
    for dt in (cfg.noise.dt * 2, cfg.noise.dt):
        ens = simulate_mild(op, problem, initial, null,
                            NoiseSpec(cfg.noise.rank, cfg.seed, dt), m_paths)
        reps.append(ito_inequality_check(op, problem, initial, initial,
                                         GaugeParams(3, 3.0), ens))
    extrapolated = 2.0 * reps[1].mean_gap - reps[0].mean_gap
    res.add("ito_inequality_smooth_gauge",
            extrapolated <= 3.0 * reps[1].stderr,
            mean_gap_coarse=reps[0].mean_gap, mean_gap_fine=reps[1].mean_gap,
            extrapolated=extrapolated, stderr=reps[1].stderr)

    family = constant_family(cfg.controls.points, 0.0, T)
    est = value_enumerate(op, problem, initial, family, noise, m_paths)
    res.add("value_estimate_finite", np.isfinite(est.value), value=est.value,
            stderr=est.stderr, argmax=est.argmax)
    res.tables["per_control.csv"] = (
        ["label", "J", "stderr"],
        [[c.label, c.mean, c.stderr] for c in est.per_control])
    return res


def run_markovian_benchmark(cfg: ExperimentConfig) -> ScenarioResult:
    res = ScenarioResult()
    T = cfg.horizon
    x0 = float(cfg.scenario_params.get("x0", 0.3))
    controls9 = list(np.linspace(-1.0, 1.0, 9))
    noise = NoiseSpec(1, cfg.seed, cfg.noise.dt)

    # part A: linear terminal reward; the best open-loop constant control is
    # optimal among all adapted controls, so Monte Carlo over constants, the
    # reduced PDE solve and the quadrature dynamic program must agree
    a_lin = 0.5
    mp_lin = benchmark_markovian_problem(
        controls9, lambda x: a_lin * np.asarray(x)[..., 0], horizon=T)
    cp = mp_lin.to_control_problem(noise_dim=1)
    init = constant_path([x0], 0.0)
    family = constant_family(controls9, 0.0, T)
    mc = value_enumerate(make_operator("zero", dim=1), cp, init, family, noise,
                         cfg.samples.paths)
    grid = FdGrid([-4.0], [4.0], [int(cfg.scenario_params.get("fd_points", 1601))])
    fd = markovian_fd_solve(mp_lin, grid)
    dp = markovian_dp_oracle(mp_lin, np.linspace(-4.0, 4.0, 801), n_steps=256)
    v_mc, v_fd, v_dp = mc.value, fd.interp(0.0, [x0]), dp(x0)
    tol = max(3 * mc.stderr, 2 * fd.refinement_estimate)
    gaps = [abs(v_mc - v_fd), abs(v_mc - v_dp), abs(v_fd - v_dp)]
    res.add("pairwise_value_agreement", max(gaps) <= tol,
            mc=v_mc, fd=v_fd, dp=v_dp, gaps=gaps, tolerance=tol,
            mc_stderr=mc.stderr, fd_refinement=fd.refinement_estimate)
    # closed form for the linear case: a x0 + max_u (u a - u^2/2) (T - t)
    exact = a_lin * x0 + max(u * a_lin - 0.5 * u * u for u in controls9) * T
    res.add("linear_closed_form", abs(v_dp - exact) <= 5e-3,
            exact=exact, dp=v_dp)

    # part B: continuous-control relaxation vs the logarithmic-transform value
    mp_cos = benchmark_markovian_problem(
        [0.0], lambda x: np.cos(np.asarray(x)[..., 0]), horizon=T, relaxed=True)
    fd_cos = markovian_fd_solve(mp_cos, grid)
    worst = 0.0
    for xq in (-0.5, 0.0, x0, 0.8):
        hc = hopf_cole_oracle(math.cos, 0.0, xq, T)
        worst = max(worst, abs(fd_cos.interp(0.0, [xq]) - hc))
    res.add("hopf_cole_agreement", worst <= 2 * fd_cos.refinement_estimate,
            worst_gap=worst, fd_refinement=fd_cos.refinement_estimate)

    # classical residual of the analytic solution at interior points
    op0 = make_operator("zero", dim=1)
    dense_controls = list(np.linspace(-1.5, 1.5, 201))
    spec = HamiltonianSpec(
        benchmark_markovian_problem(dense_controls,
                                    lambda x: np.cos(np.asarray(x)[..., 0]),
                                    horizon=T).to_control_problem(1), op0)
    v_smooth = hopf_cole_smooth(op0, math.cos, lambda y: -math.sin(y),
                                lambda y: -math.cos(y), T)
    rng = np.random.default_rng(cfg.seed)
    n_pts = int(cfg.scenario_params.get("residual_points", 50))
    res_tol = float(cfg.scenario_params.get("residual_tol", 5e-4))
    worst_res = 0.0
    for _ in range(n_pts):
        t = rng.uniform(0.05, 0.9) * T
        x = rng.uniform(-1.0, 1.0)
        worst_res = max(worst_res, abs(classical_residual(
            spec, v_smooth, constant_path([x], t), T)))
    res.add("classical_residual", worst_res <= res_tol,
            worst=worst_res, tol=res_tol, points=n_pts)

    # tangency checks on the sampled (interpolated) value
    w = lambda p: fd_cos.interp(p.horizon, p.terminal)
    tol_tan = 2 * fd_cos.refinement_estimate + res_tol
    n_tests = int(cfg.scenario_params.get("tangency_tests", 20))
    n_pass = 0
    slacks = []
    for i in range(n_tests):
        t_hat = rng.uniform(0.1, 0.7) * T
        x_hat = rng.uniform(-0.8, 0.8)
        base = constant_path([x_hat], t_hat)
        fam = [base] + [constant_path([x_hat + rng.normal(scale=0.4)],
                                      rng.uniform(t_hat, 0.95 * T))
                        for _ in range(30)]
        terms = [("upsilon_anchor", 1.0 + 0.5 * (i % 3), base,
                  GaugeParams(3, 3.0 + (i % 2)))]
        if i % 2:
            terms.append(("time_sq", 0.5, t_hat))
        if i % 3 == 0:
            terms.append(("terminal_dist_sq", 0.3, t_hat, base.terminal))
        if i % 4 == 0:
            terms.append(("upsilon_eps_anchor", 0.5, base, EpsGaugeParams(0.5)))
        test = TestFunctional(smooth=v_smooth, gauge_terms=terms, operator=op0)
        obj = [float(w(p)) - test.total_value(p) for p in fam]
        cand = fam[int(np.argmax(obj))]
        rep = tangency_check(spec, w, test, cand, fam, side="sub", tol=tol_tan)
        slacks.append(rep.inequality_value)
        n_pass += rep.passed
    res.add("tangency_checks", n_pass == n_tests, n_passed=n_pass,
            total=n_tests, tol=tol_tan, min_slack=min(slacks))
    res.tables["benchmark_values.csv"] = (
        ["method", "value"],
        [["monte_carlo", v_mc], ["finite_difference", v_fd],
         ["dynamic_program", v_dp], ["linear_closed_form", exact]])
    res.plots["fd_value_slice.dat"] = np.column_stack(
        [fd_cos.axes[0], fd_cos.table[0]])
    return res


def run_quadratic_growth(cfg: ExperimentConfig) -> ScenarioResult:
    res = ScenarioResult()
    T = cfg.horizon
    nu1 = float(cfg.scenario_params.get("nu1", 1.0))
    L = float(cfg.scenario_params.get("reward_bound", 0.5))
    eigs = cfg.scenario_params.get("stiff_eigenvalues", [-64.0])
    op = make_operator(eigenvalues=eigs)
    problem = quadratic_growth_problem(op, 1, nu1=nu1, reward_bound=L)
    noise = NoiseSpec(1, cfg.seed, cfg.noise.dt)
    points = cfg.scenario_params.get(
        "control_points", [0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0, 2.0, 4.0, 8.0])
    family = constant_family(points, 0.0, T)
    initial = constant_path(np.full(op.dim, 1.5), 0.0)
    m_paths = min(cfg.samples.paths, 4000)

    # energy-ball domination: any control whose certain quadratic cost
    # exceeds the certified value range can never be optimal
    base = cost_J(op, problem, initial,
                  ControlProcess.constant(0.0, 0.0, T, "u=0"), noise, m_paths)
    res.add("baseline_value_finite", np.isfinite(base.mean), value=base.mean)
    certified_lower = base.mean - 3 * base.stderr
    budget = (2.0 / nu1) * (L * (1.0 + T) - certified_lower)
    energies = {c.label: sum(v**2 for v in c.values) * (T - 0.0)
                for c in family}
    flagged = {label for label, e in energies.items() if e > budget}
    est = value_enumerate(op, problem, initial, family, noise, m_paths)
    # the exact content of the test: every flagged control has a certain
    # upper bound strictly below a certified achievable value, so it is
    # never the argmax
    upper_ok = all(-0.5 * nu1 * energies[lbl] + L * (1.0 + T) < certified_lower
                   for lbl in flagged)
    res.add("energy_ball_domination",
            bool(flagged) and est.argmax not in flagged and upper_ok,
            flagged=sorted(flagged), energy_budget=budget,
            argmax=est.argmax, certified_lower=certified_lower)
    res.tables["per_control.csv"] = (
        ["label", "J", "stderr", "energy", "excluded"],
        [[c.label, c.mean, c.stderr, energies[c.label],
          c.label in flagged] for c in est.per_control])

    # time-Hoelder exponent of the value under semigroup extension
    deltas = [T / 64, T / 32, T / 16, T / 8]
    small_family = [c for c in family if abs(c.values[0]) <= 1.0]
    v0 = value_enumerate(op, problem, initial, small_family, noise, m_paths)
    gaps = []
    for d in deltas:
        # value of the semigroup-extended path on the shortened window [d, T]
        ext = extend_semigroup(op, initial, d)
        fam_d = shift_family(small_family, d, T)
        vd = value_enumerate(op, problem, ext, fam_d, noise, m_paths)
        gaps.append(abs(v0.value - vd.value))
    slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    lo, hi = cfg.scenario_params.get("hoelder_band", (0.15, 0.4))
    res.add("time_hoelder_exponent", lo <= slope <= hi, slope=slope,
            deltas=deltas, gaps=gaps, band=[lo, hi])
    res.plots["hoelder_fit.dat"] = np.column_stack([deltas, gaps])
    return res


_RUNNERS = {
    "gauge_suite": run_gauge_suite,
    "parabolic_control": run_parabolic,
    "hyperbolic_control": run_hyperbolic,
    "markovian_benchmark": run_markovian_benchmark,
    "quadratic_growth": run_quadratic_growth,
}


def run_scenario(cfg: ExperimentConfig) -> ScenarioResult:
    return _RUNNERS[cfg.scenario](cfg)
