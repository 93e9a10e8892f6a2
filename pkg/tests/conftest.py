import numpy as np
import pytest

from pdhjb.paths import DiscretePath
from pdhjb.simulate import ControlProblem


def zeros_F(dim):
    return lambda batch, u: np.zeros((batch.n_samples, dim))


def zeros_G(dim, k):
    return lambda batch, u: np.zeros((batch.n_samples, dim, k))


def diag_G(dim, k, sigma=1.0):
    base = np.zeros((dim, k))
    for j in range(min(dim, k)):
        base[j, j] = sigma
    return lambda batch, u: np.broadcast_to(base, (batch.n_samples, dim, k))


def make_problem(dim, k, F=None, G=None, q=None, phi=None, lipschitz=2.0,
                 controls=(0.0,), q_depends_yz=False):
    return ControlProblem(
        F=F or zeros_F(dim),
        G=G or zeros_G(dim, k),
        q=q or (lambda batch, y, z, u: np.zeros(batch.n_samples)),
        phi=phi or (lambda batch: np.zeros(batch.n_samples)),
        lipschitz=lipschitz,
        control_space=list(controls),
        noise_dim=k,
        q_depends_yz=q_depends_yz,
    )


def random_path(rng, dim=3, horizon=1.0, n_points=6, scale=5.0):
    """Random piecewise path with values uniform in [-scale, scale]."""
    inner = np.sort(rng.uniform(0.0, horizon, size=max(n_points - 2, 0)))
    grid = np.concatenate([[0.0], inner, [horizon]])
    grid = np.unique(grid)
    values = rng.uniform(-scale, scale, size=(grid.size, dim))
    return DiscretePath(grid, values)


def random_non_tie_path(rng, dim=3, horizon=1.0, n_points=6, scale=5.0, margin=1e-2):
    """Random path whose terminal magnitude stays clear of the running max,
    so the closed-form derivative branch is stable under small bumps."""
    while True:
        p = random_path(rng, dim, horizon, n_points, scale)
        norms = np.linalg.norm(p.values, axis=1)
        prior = norms[:-1].max() if norms.size > 1 else 0.0
        if abs(norms[-1] - prior) > margin and norms[-1] > margin:
            return p


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
