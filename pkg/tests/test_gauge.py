import numpy as np
import pytest

from pdhjb import gauge
from pdhjb.gauge import EpsGaugeParams, GaugeParams
from pdhjb.operators import SpectralOperator, make_operator
from pdhjb.paths import (DiscretePath, constant_path, dupire_derivatives,
                         extend_flat, extend_semigroup, metric_d_infty,
                         sup_norm)

from conftest import random_non_tie_path, random_path

P33 = GaugeParams(3, 3.0)
PARAM_SETS = [GaugeParams(2, 3.0), GaugeParams(3, 3.0), GaugeParams(3, 5.0)]


def scalar_path(values, horizon=1.0):
    grid = np.linspace(0.0, horizon, len(values))
    return DiscretePath(grid, np.asarray(values, dtype=float)[:, None])


# ---------------------------------------------------------------------------
# values
# ---------------------------------------------------------------------------

def test_sm_vanishes_on_constant_and_zero_paths():
    assert gauge.eval_sm(P33, constant_path([1.0, 2.0], 1.0)) == 0.0
    assert gauge.eval_sm(P33, constant_path([0.0], 1.0)) == 0.0


def test_sm_zero_endpoint_case():
    # sup norm 2, terminal 0: (2^6)^3 / 2^12 = 64
    p = scalar_path([2.0, 0.0])
    assert gauge.eval_sm(P33, p) == pytest.approx(64.0, rel=1e-14)
    assert gauge.eval_upsilon(P33, p) == pytest.approx(64.0, rel=1e-14)


def test_upsilon_constant_path():
    c = np.array([0.7, -0.4])
    val = gauge.eval_upsilon(P33, constant_path(c, 1.0))
    assert val == pytest.approx(3.0 * np.linalg.norm(c) ** 6, rel=1e-13)
    assert gauge.eval_upsilon(P33, constant_path([0.0], 1.0)) == 0.0


def test_upsilon_two_path_reduces_to_difference(rng):
    op = make_operator("zero", dim=2)
    p = random_path(rng, dim=2)
    q = random_path(rng, dim=2)
    grid = np.union1d(p.grid, q.grid)
    diff = DiscretePath(grid, q.values_on(grid) - p.values_on(grid))
    assert gauge.eval_upsilon_two(P33, op, p, q) == pytest.approx(
        gauge.eval_upsilon(P33, diff), rel=1e-12)


def test_sandwich_bounds_random_sweep(rng):
    for params in PARAM_SETS:
        m, M = params.m, params.M
        for _ in range(200):
            p = random_path(rng, dim=rng.integers(1, 5))
            a = sup_norm(p)
            x = np.linalg.norm(p.terminal)
            u = gauge.eval_upsilon(params, p)
            lo = a ** (2 * m) + (M - 3.0) * x ** (2 * m)
            hi = 3.0 * a ** (2 * m) + (M - 3.0) * x ** (2 * m)
            assert lo <= u * (1 + 1e-12) + 1e-12
            assert u <= hi * (1 + 1e-12) + 1e-12


# ---------------------------------------------------------------------------
# closed-form derivatives
# ---------------------------------------------------------------------------

def test_grad_hess_zero_path():
    z = constant_path([0.0, 0.0], 1.0)
    np.testing.assert_array_equal(gauge.grad_upsilon(P33, z), np.zeros(2))
    np.testing.assert_array_equal(gauge.hess_upsilon(P33, z), np.zeros((2, 2)))


def test_grad_terminal_strict_max_branch():
    # oracle: with the terminal value the strict running max, the curvature
    # term drops and grad = 2 m M |x|^{2m-2} x
    p = scalar_path([0.5, 2.0])
    m, M = 3, 5.0
    params = GaugeParams(m, M)
    g = gauge.grad_upsilon(params, p)
    assert g[0] == pytest.approx(2 * m * M * 2.0 ** (2 * m - 2) * 2.0, rel=1e-13)


def test_hess_requires_m_at_least_two():
    with pytest.raises(ValueError):
        gauge.hess_upsilon(GaugeParams(1, 3.0), scalar_path([1.0, 0.5]))


def test_derivative_caps(rng):
    for params in PARAM_SETS:
        m, M = params.m, params.M
        for _ in range(100):
            p = random_path(rng, dim=3)
            x = np.linalg.norm(p.terminal)
            g = np.linalg.norm(gauge.grad_upsilon(params, p))
            assert g <= 2 * m * (3 + abs(M - 3)) * x ** (2 * m - 1) * (1 + 1e-10) + 1e-12
            h = np.linalg.norm(gauge.hess_upsilon(params, p), ord=2)
            cap = 2 * m * (3 * (6 * m - 1) + (2 * m - 1) * abs(M - 3)) * x ** (2 * m - 2)
            assert h <= cap * (1 + 1e-10) + 1e-12


@pytest.mark.parametrize("params", PARAM_SETS)
def test_grad_hess_match_finite_differences(params, rng):
    # relative error is measured against the value-derived scales u/(1+s) and
    # u/(1+s)^2 (u = Upsilon(gamma), s = sup norm): the round-off floor of a
    # second difference of a u-sized functional is ~ sqrt(eps*u*f''''), so a
    # plain relative metric against a near-zero derivative is unattainable in
    # double precision.
    f = lambda p: gauge.eval_upsilon(params, p)
    for _ in range(30):
        p = random_non_tie_path(rng, dim=3, margin=2e-2)
        # step refined below the default: truncation ~ h^2 must sit clear of
        # the 1e-5 certification level
        d = dupire_derivatives(f, p, h_space=2.5e-5 * (1.0 + sup_norm(p)))
        g = gauge.grad_upsilon(params, p)
        h = gauge.hess_upsilon(params, p)
        s, u = sup_norm(p), gauge.eval_upsilon(params, p)
        assert np.linalg.norm(d.dx - g) <= 1e-5 * (1.0 + u / (1.0 + s))
        assert np.linalg.norm(d.dxx - h) <= 1e-5 * (1.0 + u / (1.0 + s) ** 2)


def test_horizontal_invariance_flat_extension(rng):
    # flat time extension leaves both the sup norm and the terminal value
    # unchanged, so Upsilon is exactly invariant
    for _ in range(20):
        p = random_path(rng, dim=2)
        e = extend_flat(p, p.horizon + 0.7)
        assert gauge.eval_upsilon(P33, e) == gauge.eval_upsilon(P33, p)


def test_semigroup_extension_monotone(rng):
    op = make_operator("dirichlet_laplacian", dim=2)
    for _ in range(20):
        p = random_path(rng, dim=2)
        vals = [gauge.eval_upsilon(P33, extend_semigroup(op, p, p.horizon + ds))
                for ds in (0.0, 0.1, 0.4, 1.0)]
        assert all(a >= b - 1e-12 * (1.0 + abs(a)) for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# Upsilon^eps
# ---------------------------------------------------------------------------

def test_upsilon_eps_values():
    params = EpsGaugeParams(1.0)
    c = np.array([0.8, 0.3])
    assert gauge.eval_upsilon_eps(params, constant_path(c, 1.0)) == pytest.approx(
        3.0 * np.dot(c, c), rel=1e-13)
    # sup norm 1, terminal 0, eps 1: 1 / (1 + 1) = 1/2
    p = scalar_path([1.0, 0.0])
    assert gauge.eval_upsilon_eps(params, p) == pytest.approx(0.5, rel=1e-14)


def test_upsilon_eps_bounds_and_caps(rng):
    for eps in (0.1, 1.0):
        params = EpsGaugeParams(eps)
        for _ in range(200):
            p = random_path(rng, dim=3)
            a = sup_norm(p)
            v = gauge.eval_upsilon_eps(params, p)
            assert max(a**2 - eps / 2.0, 0.0) <= v + 1e-12
            assert v <= 3.0 * a**2 + 1e-12
            g = np.linalg.norm(gauge.grad_upsilon_eps(params, p))
            assert g <= 6.0 * np.linalg.norm(p.terminal) + 1e-12
            h = np.linalg.norm(gauge.hess_upsilon_eps(params, p), ord=2)
            assert h <= 30.0 + 1e-12


@pytest.mark.parametrize("eps", [0.1, 1.0])
def test_upsilon_eps_derivatives_match_finite_differences(eps, rng):
    params = EpsGaugeParams(eps)
    f = lambda p: gauge.eval_upsilon_eps(params, p)
    for _ in range(30):
        p = random_non_tie_path(rng, dim=3, margin=2e-2)
        d = dupire_derivatives(f, p)
        g = gauge.grad_upsilon_eps(params, p)
        h = gauge.hess_upsilon_eps(params, p)
        assert np.linalg.norm(d.dx - g) <= 1e-5 * (1.0 + np.linalg.norm(g))
        assert np.linalg.norm(d.dxx - h) <= 1e-5 * (1.0 + np.linalg.norm(h))


def test_eps_param_validation():
    with pytest.raises(ValueError):
        EpsGaugeParams(0.0)


# ---------------------------------------------------------------------------
# gauge-type combinations
# ---------------------------------------------------------------------------

def test_bar_upsilon_vanishes_on_diagonal(rng):
    op = make_operator("dirichlet_laplacian", dim=2)
    p = random_path(rng, dim=2)
    assert gauge.eval_bar_upsilon(P33, op, p, p) == 0.0


def test_bar_upsilon_equal_horizons(rng):
    op = make_operator("zero", dim=2)
    p = random_path(rng, dim=2)
    q = random_path(rng, dim=2)
    assert gauge.eval_bar_upsilon(P33, op, p, q) == pytest.approx(
        gauge.eval_upsilon_two(P33, op, p, q))


def test_bar_upsilon_pair_zero_on_identical_pairs(rng):
    op = make_operator("zero", dim=2)
    p = random_path(rng, dim=2)
    q = random_path(rng, dim=2)
    assert gauge.eval_bar_upsilon_pair(P33, op, (p, q), (p, q)) == 0.0


def test_gauge_property_metric_bound(rng):
    # smallness of bar-Upsilon forces metric smallness with the explicit
    # exponents delta^{1/2} + delta^{1/(2m)}
    op = make_operator("dirichlet_laplacian", dim=2)
    for _ in range(50):
        p = random_path(rng, dim=2, horizon=rng.uniform(0.5, 1.5))
        q = random_path(rng, dim=2, horizon=rng.uniform(0.5, 1.5))
        delta = gauge.eval_bar_upsilon(P33, op, p, q)
        if delta == 0.0:
            continue
        d = metric_d_infty(op, p, q)
        assert d <= delta ** 0.5 + delta ** (1.0 / 6.0) + 1e-9


# ---------------------------------------------------------------------------
# subadditivity and convexity
# ---------------------------------------------------------------------------

def test_subadditivity_zero_and_doubling(rng):
    p = random_path(rng, dim=2)
    zero = DiscretePath(p.grid, np.zeros_like(p.values))
    assert gauge.check_subadditivity(P33, p, zero)
    # q = p gives exact equality: Upsilon(2p)^{1/2m} = 2 Upsilon(p)^{1/2m}
    assert gauge.check_subadditivity(P33, p, p)
    two = gauge.eval_upsilon(P33, DiscretePath(p.grid, 2 * p.values)) ** (1 / 6)
    one = gauge.eval_upsilon(P33, p) ** (1 / 6)
    assert two == pytest.approx(2 * one, rel=1e-12)


def test_subadditivity_random_sweep(rng):
    for params in (GaugeParams(1, 3.0), GaugeParams(2, 5.0), P33):
        for _ in range(300):
            p = random_path(rng, dim=2)
            q = DiscretePath(p.grid, rng.uniform(-5, 5, size=p.values.shape))
            assert gauge.check_subadditivity(params, p, q)


def test_subadditivity_requires_gauge_m():
    p = constant_path([1.0], 1.0)
    with pytest.raises(ValueError):
        gauge.check_subadditivity(GaugeParams(3, 2.0), p, p)


def test_g_convexity():
    for m in (1, 2, 3):
        for M in (3.0, 5.0):
            assert gauge.g_convexity_min(GaugeParams(m, M), 2000) >= -1e-12
    # boundary sanity: g(1) = M^{1/2m}
    m, M = 3, 5.0
    g1 = (1 - 1 + 3 + (M - 3)) ** (1 / (2 * m))
    assert g1 == pytest.approx(M ** (1 / (2 * m)))
