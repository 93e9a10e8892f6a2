import math

import numpy as np
import pytest

from pdhjb.gauge import GaugeParams
from pdhjb.operators import make_operator
from pdhjb.paths import DiscretePath, constant_path
from pdhjb.simulate import ControlProblem
from pdhjb.viscosity import (FdGrid, HamiltonianSpec, MarkovianProblem,
                             SmoothFunctional, TestFunctional,
                             classical_residual, hamiltonian,
                             hopf_cole_oracle, markovian_dp_oracle,
                             markovian_fd_solve, tangency_check)

T = 1.0


def scalar_problem(F=None, G=None, q=None, phi=None, controls=(0.0,), L=1.0):
    n = 1
    return ControlProblem(
        F=F or (lambda b, u: np.zeros((b.n_samples, n))),
        G=G or (lambda b, u: np.zeros((b.n_samples, n, 1))),
        q=q or (lambda b, y, z, u: np.zeros(b.n_samples)),
        phi=phi or (lambda b: np.zeros(b.n_samples)),
        lipschitz=L, control_space=list(controls), noise_dim=1,
        q_depends_yz=False)


def benchmark_problem(controls):
    """1-d benchmark: zero generator, drift = control, unit noise, quadratic
    control cost."""
    return scalar_problem(
        F=lambda b, u: np.full((b.n_samples, 1), u),
        G=lambda b, u: np.ones((b.n_samples, 1, 1)),
        q=lambda b, y, z, u: np.full(b.n_samples, -0.5 * u * u),
        controls=controls)


def mk_point(x=0.3, horizon=0.4):
    return constant_path([x], horizon)


def test_hamiltonian_zero():
    spec = HamiltonianSpec(scalar_problem(), make_operator("zero", dim=1))
    assert hamiltonian(spec, mk_point(), 0.0, [1.0], [[2.0]]) == 0.0


def test_hamiltonian_single_control_drift_only():
    prob = scalar_problem(F=lambda b, u: np.full((b.n_samples, 1), 0.7),
                          controls=[1.0])
    spec = HamiltonianSpec(prob, make_operator("zero", dim=1))
    assert hamiltonian(spec, mk_point(), 0.0, [2.0], [[0.0]]) == pytest.approx(1.4)


def test_hamiltonian_three_point_benchmark():
    # oracle by hand: max over u in {-1,0,1} of (u p - u^2/2) = max(|p|-1/2, 0)
    spec = HamiltonianSpec(benchmark_problem([-1.0, 0.0, 1.0]),
                           make_operator("zero", dim=1))
    for p in (-2.0, -0.3, 0.0, 0.4, 1.7):
        for l in (0.0, 0.8):
            expected = max(abs(p) - 0.5, 0.0) + 0.5 * l
            got = hamiltonian(spec, mk_point(), 0.0, [p], [[l]])
            assert got == pytest.approx(expected, abs=1e-14)


def test_hamiltonian_monotone_in_r():
    L = 0.7
    prob = scalar_problem(q=lambda b, y, z, u: -L * y, controls=[0.0])
    prob.q_depends_yz = True
    spec = HamiltonianSpec(prob, make_operator("zero", dim=1))
    r1, r2 = -0.4, 1.3
    gap = (hamiltonian(spec, mk_point(), r1, [0.2], [[0.1]])
           - hamiltonian(spec, mk_point(), r2, [0.2], [[0.1]]))
    assert gap >= L * (r2 - r1) - 1e-12


def test_hamiltonian_degenerate_ellipticity():
    spec = HamiltonianSpec(benchmark_problem([-1.0, 0.0, 1.0]),
                           make_operator("zero", dim=1))
    vals = [hamiltonian(spec, mk_point(), 0.0, [0.3], [[l]])
            for l in (0.0, 0.5, 1.0, 2.0)]
    assert all(a <= b + 1e-14 for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# Hopf-Cole oracle
# ---------------------------------------------------------------------------

def test_hopf_cole_constant():
    assert hopf_cole_oracle(lambda x: 2.0, 0.3, 1.1, T) == pytest.approx(2.0)


def test_hopf_cole_linear():
    # oracle: Gaussian mgf, a x + a^2 (T - t) / 2
    a, t, x = 0.7, 0.25, -0.4
    expected = a * x + a * a * (T - t) / 2.0
    assert hopf_cole_oracle(lambda y: a * y, t, x, T) == pytest.approx(expected, rel=1e-12)


def test_hopf_cole_terminal():
    assert hopf_cole_oracle(math.cos, T, 0.8, T) == pytest.approx(math.cos(0.8))


def hopf_cole_smooth(op, phi, dphi, d2phi, total_time):
    """Smooth functional for the continuous-control benchmark value, with
    quadrature-side derivatives (independent of the equation)."""

    def parts(t, x):
        x = float(np.atleast_1d(x)[0])
        span = total_time - t
        nodes, weights = np.polynomial.hermite.hermgauss(96)
        pts = x + math.sqrt(2.0 * span) * nodes if span > 0 else np.full_like(nodes, x)
        e = np.exp([phi(p) for p in pts])
        q0 = float(np.dot(weights, e)) / math.sqrt(math.pi)
        q1 = float(np.dot(weights, [dphi(p) for p in pts] * e)) / math.sqrt(math.pi)
        q2 = float(np.dot(weights, [(d2phi(p) + dphi(p) ** 2) for p in pts] * e)) \
            / math.sqrt(math.pi)
        return q0, q1, q2

    def v(t, x):
        q0, _, _ = parts(t, x)
        return math.log(q0)

    def v_x(t, x):
        q0, q1, _ = parts(t, x)
        return np.array([q1 / q0])

    def v_xx(t, x):
        q0, q1, q2 = parts(t, x)
        return np.array([[q2 / q0 - (q1 / q0) ** 2]])

    def v_t(t, x, h=1e-6):
        return (v(t + h, x) - v(t - h, x)) / (2.0 * h)

    return SmoothFunctional.from_state_function(op, v, v_t, v_x, v_xx)


def test_classical_residual_hopf_cole():
    # dense control grid approximates sup_u (u p - u^2/2) = p^2/2
    controls = list(np.linspace(-1.5, 1.5, 201))
    spec = HamiltonianSpec(benchmark_problem(controls), make_operator("zero", dim=1))
    v = hopf_cole_smooth(spec.operator, math.cos,
                         lambda y: -math.sin(y), lambda y: -math.cos(y), T)
    for x in (-0.8, 0.0, 0.5):
        for t in (0.2, 0.6):
            res = classical_residual(spec, v, constant_path([x], t), T)
            assert abs(res) <= 2e-4, (t, x, res)


def test_classical_residual_terminal_gap():
    prob = benchmark_problem([0.0])
    prob.phi = lambda b: np.cos(b.x[:, 0])
    spec = HamiltonianSpec(prob, make_operator("zero", dim=1))
    v = SmoothFunctional.from_state_function(
        spec.operator, lambda t, x: 1.0, lambda t, x: 0.0,
        lambda t, x: np.zeros(1), lambda t, x: np.zeros((1, 1)))
    gap = classical_residual(spec, v, constant_path([0.0], T), T)
    assert gap == pytest.approx(1.0 - 1.0)  # v = 1, phi(0) = cos 0 = 1
    gap2 = classical_residual(spec, v, constant_path([np.pi / 2], T), T)
    assert gap2 == pytest.approx(1.0, abs=1e-12)


def test_classical_residual_constant_guess_nonzero():
    # a flat extension of the terminal datum does not solve the equation
    controls = [-1.0, 0.0, 1.0]
    spec = HamiltonianSpec(benchmark_problem(controls), make_operator("zero", dim=1))
    v = SmoothFunctional.from_state_function(
        spec.operator, lambda t, x: math.cos(float(x[0])),
        lambda t, x: 0.0,
        lambda t, x: np.array([-math.sin(float(x[0]))]),
        lambda t, x: np.array([[-math.cos(float(x[0]))]]))
    res = classical_residual(spec, v, constant_path([1.2], 0.5), T)
    assert abs(res) > 1e-2


# ---------------------------------------------------------------------------
# reduced finite-difference solver and oracles
# ---------------------------------------------------------------------------

def bench_markovian(controls, phi, lam=0.0):
    return MarkovianProblem(
        eigenvalues=np.array([lam]),
        fbar=lambda t, x, u: np.full_like(np.atleast_2d(x), u),
        gbar=lambda t, x, u: np.ones(np.atleast_2d(x).shape + (1,)),
        qbar=lambda t, x, r, z, u: np.full(np.atleast_2d(x).shape[0], -0.5 * u * u),
        phibar=phi, controls=controls, lipschitz=1.0, horizon=T)


def test_fd_pure_transport():
    lam = -1.0
    mp = MarkovianProblem(
        eigenvalues=np.array([lam]),
        fbar=lambda t, x, u: np.zeros_like(np.atleast_2d(x)),
        gbar=lambda t, x, u: np.zeros(np.atleast_2d(x).shape + (1,)),
        qbar=lambda t, x, r, z, u: np.zeros(np.atleast_2d(x).shape[0]),
        phibar=lambda x: np.cos(np.asarray(x)[..., 0]),
        controls=[0.0], lipschitz=1.0, horizon=T)
    sol = markovian_fd_solve(mp, FdGrid([-3.0], [3.0], [121]), with_refinement=True)
    for t in (0.0, 0.5):
        for x in (-0.5, 0.4):
            exact = math.cos(x * math.exp(lam * (T - t)))
            got = sol.interp(t, [x])
            assert abs(got - exact) <= max(2 * sol.refinement_estimate, 5e-3)


def test_fd_matches_dp_oracle_and_hopf_cole():
    controls = list(np.linspace(-1.0, 1.0, 9))
    mp = bench_markovian(controls, lambda x: np.cos(np.asarray(x)[..., 0]))
    grid = FdGrid([-4.0], [4.0], [161])
    sol = markovian_fd_solve(mp, grid, with_refinement=True)
    dp = markovian_dp_oracle(mp, np.linspace(-4.0, 4.0, 161), n_steps=64)
    for x in (-0.5, 0.0, 0.7):
        assert abs(sol.interp(0.0, [x]) - dp(x)) <= max(
            4 * sol.refinement_estimate, 2e-2)
    # continuous-control relaxation against the analytic oracle
    dense = bench_markovian(list(np.linspace(-1.5, 1.5, 61)),
                            lambda x: np.cos(np.asarray(x)[..., 0]))
    sol_dense = markovian_fd_solve(dense, grid, with_refinement=True)
    for x in (-0.5, 0.0, 0.7):
        hc = hopf_cole_oracle(math.cos, 0.0, x, T)
        assert abs(sol_dense.interp(0.0, [x]) - hc) <= 2 * sol_dense.refinement_estimate + 1e-3


def test_fd_first_order_refinement():
    controls = list(np.linspace(-1.0, 1.0, 5))
    mp = bench_markovian(controls, lambda x: np.cos(np.asarray(x)[..., 0]))
    errs = []
    hc = {x: hopf_cole_oracle(math.cos, 0.0, x, T) for x in (0.0, 0.4)}
    dp_ref = markovian_dp_oracle(mp, np.linspace(-4.0, 4.0, 801), n_steps=256)
    for n in (41, 81, 161):
        sol = markovian_fd_solve(mp, FdGrid([-4.0], [4.0], [n]), with_refinement=False)
        errs.append(max(abs(sol.interp(0.0, [x]) - dp_ref(x)) for x in (0.0, 0.4)))
    assert errs[2] < errs[0]


# ---------------------------------------------------------------------------
# tangency checks
# ---------------------------------------------------------------------------

def test_tangency_classical_solution_passes():
    controls = list(np.linspace(-1.5, 1.5, 61))
    prob = benchmark_problem(controls)
    op = make_operator("zero", dim=1)
    spec = HamiltonianSpec(prob, op)
    v = hopf_cole_smooth(op, math.cos, lambda y: -math.sin(y),
                         lambda y: -math.cos(y), T)

    w = lambda p: v.value(p)          # the solution itself, sampled exactly
    rng = np.random.default_rng(7)
    base = constant_path([0.2], 0.5)
    family = [base]
    for _ in range(40):
        t = rng.uniform(0.5, 0.95)
        family.append(constant_path([0.2 + rng.normal(scale=0.5)], t))

    test = TestFunctional(
        smooth=v,
        gauge_terms=[("upsilon_anchor", 1.0, base, GaugeParams(3, 3.0)),
                     ("time_sq", 0.5, base.horizon)],
        operator=op)
    # w - phi - g = -g <= 0 with equality at the anchor: verified maximum
    rep = tangency_check(spec, w, test, base, family, side="sub", tol=2e-3)
    assert rep.passed, rep.inequality_value


def test_tangency_super_side():
    controls = list(np.linspace(-1.5, 1.5, 61))
    prob = benchmark_problem(controls)
    op = make_operator("zero", dim=1)
    spec = HamiltonianSpec(prob, op)
    v = hopf_cole_smooth(op, math.cos, lambda y: -math.sin(y),
                         lambda y: -math.cos(y), T)
    w = lambda p: v.value(p)
    base = constant_path([-0.3], 0.4)
    neg_v = SmoothFunctional(
        value=lambda p: -v.value(p), dt=lambda p: -v.dt(p),
        dx=lambda p: -v.dx(p), dxx=lambda p: -v.dxx(p),
        a_star_dx=lambda p: -v.a_star_dx(p))
    family = [base] + [constant_path([-0.3 + d], 0.4 + s)
                       for d in (-0.4, 0.2) for s in (0.0, 0.3)]
    test = TestFunctional(
        smooth=neg_v,
        gauge_terms=[("upsilon_anchor", 2.0, base, GaugeParams(3, 3.0))],
        operator=op)
    # w + phi + g = g >= 0 with equality at the anchor: verified minimum
    rep = tangency_check(spec, w, test, base, family, side="super", tol=2e-3)
    assert rep.passed, rep.inequality_value


def test_tangency_precondition_violation():
    controls = [-1.0, 0.0, 1.0]
    prob = benchmark_problem(controls)
    op = make_operator("zero", dim=1)
    spec = HamiltonianSpec(prob, op)
    v = SmoothFunctional.from_state_function(
        op, lambda t, x: 0.0, lambda t, x: 0.0,
        lambda t, x: np.zeros(1), lambda t, x: np.zeros((1, 1)))
    w = lambda p: float(p.terminal[0])
    base = constant_path([0.0], 0.5)
    other = constant_path([2.0], 0.5)
    # gauge anchored away from the candidate drags it below the other member
    test = TestFunctional(
        smooth=v,
        gauge_terms=[("upsilon_anchor", 50.0, other, GaugeParams(3, 3.0))],
        operator=op)
    with pytest.raises(ValueError, match="precondition"):
        tangency_check(spec, w, test, base, [base, other], side="sub")


def test_test_functional_weight_cap():
    op = make_operator("zero", dim=1)
    v = SmoothFunctional.from_state_function(
        op, lambda t, x: 0.0, lambda t, x: 0.0,
        lambda t, x: np.zeros(1), lambda t, x: np.zeros((1, 1)))
    with pytest.raises(ValueError, match="cap"):
        TestFunctional(smooth=v,
                       gauge_terms=[("time_sq", 100.0, 0.0)],
                       operator=op, weight_cap=64.0)
