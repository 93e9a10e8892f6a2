import math

import numpy as np
import pytest

from pdhjb.bsde import (BsdeSpec, PicardDivergedError, comparison_check,
                        default_basis, solve_picard, solve_regression)
from pdhjb.control import ControlProcess
from pdhjb.operators import make_operator
from pdhjb.paths import constant_path
from pdhjb.simulate import NoiseSpec, simulate_mild

from conftest import diag_G, make_problem

T = 1.0


def constant_basis(batch):
    return np.ones((batch.n_samples, 1))


def brownian_ensemble(dim=1, sigma=0.5, dt=1 / 64, samples=2000, seed=31):
    op = make_operator("zero", dim=dim)
    prob = make_problem(dim, dim, G=diag_G(dim, dim, sigma))
    noise = NoiseSpec(dim, seed=seed, dt=dt)
    init = constant_path(np.zeros(dim), 0.0)
    ctrl = ControlProcess.constant(0.0, 0.0, T, "null")
    return simulate_mild(op, prob, init, ctrl, noise, samples)


def spec_with(q=None, phi=None, L=1.0, q_yz=True):
    return BsdeSpec(
        q=q or (lambda b, y, z, u: np.zeros(b.n_samples)),
        phi=phi or (lambda b: np.zeros(b.n_samples)),
        lipschitz=L, q_depends_yz=q_yz)


def test_zero_driver_constant_basis_is_sample_mean():
    ens = brownian_ensemble()
    phi = lambda b: b.x[:, 0] ** 2
    sol = solve_regression(ens, spec_with(phi=phi, q_yz=False), basis=constant_basis)
    batch = ens.batch_at(ens.grid.size - 1)
    target = phi(batch).mean()
    assert sol.y0_value == pytest.approx(target, rel=1e-12)
    # every intermediate Y is the running sample mean as well
    assert np.ptp(sol.Y[:, 0]) == 0.0


def test_terminal_condition_exact_per_sample():
    ens = brownian_ensemble(samples=500)
    phi = lambda b: np.tanh(b.x[:, 0]) + b.sup_norm
    sol = solve_regression(ens, spec_with(phi=phi))
    batch = ens.batch_at(ens.grid.size - 1)
    np.testing.assert_array_equal(sol.Y[:, -1], phi(batch))


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0])
def test_linear_driver_closed_form(r):
    # oracle: dY = rY ds - Z dW with terminal 1 + X(T) (zero-mean second
    # term) has Y(t) = exp(-r (T - t)) * (1 + E[X(T)]) = exp(-r T)
    ens = brownian_ensemble(dt=1 / 256, samples=3000, seed=77)
    phi = lambda b: 1.0 + b.x[:, 0]
    q = lambda b, y, z, u: -r * y
    sol = solve_regression(ens, spec_with(q=q, phi=phi, L=max(r, 1.0)))
    exact = math.exp(-r * T)
    assert abs(sol.y0_value - exact) <= 3 * sol.y0_stderr + 2e-3


def test_constant_driver_additive_shift():
    ens = brownian_ensemble()
    phi = lambda b: np.sin(b.x[:, 0])
    base = solve_regression(ens, spec_with(phi=phi, q_yz=False))
    c = 0.7
    shifted = solve_regression(
        ens, spec_with(q=lambda b, y, z, u: np.full(b.n_samples, c),
                       phi=phi, q_yz=False))
    # with an intercept in the basis the shift integrates exactly
    assert shifted.y0_value - base.y0_value == pytest.approx(c * T, abs=1e-10)


def test_martingale_normal_equations():
    ens = brownian_ensemble(samples=1500)
    phi = lambda b: np.cos(b.x[:, 0]) + 0.2 * b.integral[:, 0]
    sol = solve_regression(ens, spec_with(phi=phi, q_yz=False))
    assert sol.diagnostics["max_normal_eq_violation"] <= 1e-10


def test_apriori_bound_stable():
    # E sup |Y|^2 <= C (1 + E|phi|^2 + E int |q(.,0,0)|^2), C stable under
    # refinement of dt and M
    phi = lambda b: np.tanh(b.x[:, 0]) + 0.5
    q = lambda b, y, z, u: 0.3 * np.sin(b.x[:, 0]) - 0.2 * y
    ratios = []
    for dt, m in ((1 / 32, 1000), (1 / 64, 2000)):
        ens = brownian_ensemble(dt=dt, samples=m, seed=13)
        sol = solve_regression(ens, spec_with(q=q, phi=phi))
        sup_y2 = np.mean(np.max(sol.Y**2, axis=1))
        batch = ens.batch_at(ens.grid.size - 1)
        denom = 1.0 + np.mean(phi(batch) ** 2) + 0.09 * T
        ratios.append(sup_y2 / denom)
    assert np.isfinite(ratios).all()
    assert abs(ratios[1] - ratios[0]) <= 0.2 * max(ratios)


def test_stability_under_terminal_perturbation():
    ens = brownian_ensemble(samples=1200, seed=5)
    phi = lambda b: np.sin(b.x[:, 0])
    q = lambda b, y, z, u: -0.5 * y
    base = solve_regression(ens, spec_with(q=q, phi=phi))
    consts = []
    for delta in (0.1, 0.2):
        pert = solve_regression(
            ens, spec_with(q=q, phi=lambda b: phi(b) + delta))
        consts.append(np.mean(np.max((pert.Y - base.Y) ** 2, axis=1)) / delta**2)
    assert abs(consts[0] - consts[1]) <= 0.2 * max(consts)


# ---------------------------------------------------------------------------
# Picard cross-validation
# ---------------------------------------------------------------------------

def test_picard_zero_driver_one_iteration():
    ens = brownian_ensemble(samples=800)
    spec = spec_with(phi=lambda b: b.x[:, 0] ** 2, q_yz=False)
    direct = solve_regression(ens, spec)
    picard = solve_picard(ens, spec, iterations=2)
    np.testing.assert_array_equal(picard.Y, direct.Y)
    assert picard.diagnostics["picard_gaps"][-1] == 0.0


def test_picard_linear_driver_matches_closed_form():
    ens = brownian_ensemble(dt=1 / 128, samples=2000, seed=19)
    r = 0.5
    spec = spec_with(q=lambda b, y, z, u: -r * y, phi=lambda b: 1.0 + b.x[:, 0])
    sol = solve_picard(ens, spec, iterations=12, tol=1e-12)
    assert abs(sol.y0_value - math.exp(-r * T)) <= 3 * sol.y0_stderr + 4e-3
    gaps = sol.diagnostics["picard_gaps"]
    assert gaps[2] < gaps[1] < gaps[0]


def test_picard_divergence_detection():
    ens = brownian_ensemble(dt=1 / 4, samples=200)
    # Lipschitz constant far beyond the contraction threshold for this dt
    spec = spec_with(q=lambda b, y, z, u: -30.0 * y, L=30.0,
                     phi=lambda b: 1.0 + b.x[:, 0])
    with pytest.raises(PicardDivergedError):
        solve_picard(ens, spec, iterations=12)


# ---------------------------------------------------------------------------
# comparison of ordered data
# ---------------------------------------------------------------------------

def test_comparison_identical_specs():
    ens = brownian_ensemble(samples=600)
    spec = spec_with(phi=lambda b: np.sin(b.x[:, 0]), q_yz=False)
    rep = comparison_check(ens, spec, spec)
    assert rep.passed
    assert abs(rep.min_margin) <= 1e-12


def test_comparison_terminal_shift():
    ens = brownian_ensemble(samples=600)
    phi = lambda b: np.sin(b.x[:, 0])
    s2 = spec_with(phi=phi, q_yz=False)
    s1 = spec_with(phi=lambda b: phi(b) + 1.0, q_yz=False)
    rep = comparison_check(ens, s1, s2)
    assert rep.passed
    np.testing.assert_allclose(rep.mean_diff, 1.0, atol=1e-10)


def test_comparison_driver_shift():
    ens = brownian_ensemble(samples=600)
    phi = lambda b: np.sin(b.x[:, 0])
    s2 = spec_with(phi=phi, q_yz=False)
    s1 = spec_with(q=lambda b, y, z, u: np.ones(b.n_samples), phi=phi, q_yz=False)
    rep = comparison_check(ens, s1, s2)
    assert rep.passed
    np.testing.assert_allclose(rep.mean_diff, T - rep.times, atol=1e-10)


def test_comparison_precondition_violation():
    ens = brownian_ensemble(samples=100)
    s1 = spec_with(phi=lambda b: -np.abs(b.x[:, 0]), q_yz=False)
    s2 = spec_with(phi=lambda b: np.zeros(b.n_samples), q_yz=False)
    with pytest.raises(ValueError, match="sample"):
        comparison_check(ens, s1, s2)


def test_driver_lipschitz_spot_check(rng):
    ens = brownian_ensemble(samples=50)
    batch = ens.batch_at(ens.grid.size - 1)
    good = spec_with(q=lambda b, y, z, u: -0.5 * y + 0.2 * z[:, 0], L=1.0)
    assert good.spot_check_driver_lipschitz(batch, 0.0, rng)
    bad = spec_with(q=lambda b, y, z, u: -5.0 * y, L=1.0)
    assert not bad.spot_check_driver_lipschitz(batch, 0.0, rng)
