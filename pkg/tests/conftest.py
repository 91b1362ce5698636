import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.RandomState(0)


def weighted_fixture(rng, n, d=1, m_targets=1, zero_frac=0.0):
    """Random states, actions and positive weights for sparse-vs-dense checks."""
    X = rng.uniform(-2, 2, size=(n, d))
    y = np.sin(2 * X[:, :1]) + 0.1 * rng.randn(n, 1)
    if m_targets > 1:
        y = np.hstack([y] + [np.cos(X[:, :1]) * k for k in range(1, m_targets)])
    w = rng.uniform(0.2, 1.5, size=n)
    if zero_frac:
        w[rng.rand(n) < zero_frac] = 0.0
    return X, y, w


def full_rank_fixture(seed, n_max=50):
    """Random weighted regression problem for sparse-vs-dense checks at L = N.

    N in [5, n_max], D in {1, 2}, states uniform on [-3, 3]^D, random
    kernel and noise. Draws whose Gram matrix has condition number >= 1e15
    are redrawn from the same stream: at that point the pseudo-input Gram
    (here the full Gram) is singular to working precision, the sparse path
    must regularize it with diagonal jitter and is then a different model
    from the dense oracle.
    Returns ``(X, targets, weights, signal_var, lengthscale, noise_var, probes)``.
    """
    from sgpps.verification import se_kernel

    r = np.random.RandomState(seed)
    while True:
        n, D = r.randint(5, n_max + 1), r.randint(1, 3)
        X = r.uniform(-3, 3, size=(n, D))
        sf2, ell, s2 = r.uniform(0.5, 2.0), r.uniform(0.2, 1.5), r.uniform(0.01, 0.5)
        w = r.uniform(0.2, 1.5, size=n)
        a = w * (np.sin(X.sum(axis=1)) + 0.1 * r.randn(n))
        probes = r.uniform(-3.5, 3.5, size=(100, D))
        if np.linalg.cond(se_kernel(X, X, sf2, [ell])) < 1e15:
            return X, a, w, sf2, ell, s2, probes


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
