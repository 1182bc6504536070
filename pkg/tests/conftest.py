import numpy as np
import pytest

from sdpadmm import SolverConfig, build_kernel, generate_planted
from sdpadmm.problem import haar_orthogonal


def random_sym(n, rng, scale=1.0):
    m = rng.standard_normal((n, n))
    return scale * 0.5 * (m + m.T)


def random_indefinite(n, r, rng, gap=0.5, top=2.0):
    """Symmetric matrix with r eigenvalues in [gap, top] and the rest in
    [-top, -gap]."""
    q = haar_orthogonal(n, rng)
    lam = np.concatenate([rng.uniform(gap, top, r), -rng.uniform(gap, top, n - r)])
    return 0.5 * ((q * lam) @ q.T + ((q * lam) @ q.T).T)


@pytest.fixture(scope="session")
def small_planted():
    """n=8 nondegenerate instance with kernel, shared by read-only tests."""
    prob, cert = generate_planted(8, 12, 3, seed=0)
    return prob, cert, build_kernel(prob)


@pytest.fixture
def default_cfg():
    return SolverConfig(sigma=1.0, max_iter=50_000, tol_rmax=1e-10, trace_every=1, seed=0)
