import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgpps.kernels import (
    KernelSpec,
    NumericalError,
    chol_solve,
    gram,
    jitter_cholesky,
    kdiag,
    kernel_eval,
)
from sgpps.verification import se_kernel


def iso(sf2=1.0, ell=1.0):
    return KernelSpec("se-iso", np.log(sf2), (np.log(ell),))


def ard(sf2, ells):
    return KernelSpec("se-ard", np.log(sf2), tuple(np.log(ells)))


def test_spec_validation():
    with pytest.raises(ValueError, match="exactly one lengthscale"):
        KernelSpec("se-iso", 0.0, (0.0, 0.0))
    with pytest.raises(ValueError, match="unknown kernel family"):
        KernelSpec("matern", 0.0, (0.0,))
    spec = ard(1.0, [1.0, 2.0])
    assert spec.input_dim == 2
    with pytest.raises(ValueError, match="2-dimensional"):
        gram(spec, np.zeros((3, 3)))


def test_zero_distance_returns_signal_variance():
    assert kernel_eval(iso(sf2=2.0), [0.3, -1.0], [0.3, -1.0]) == 2.0


def test_far_field_underflows():
    assert kernel_eval(iso(), [0.0], [1e6]) <= 1e-300


def test_ard_hand_arithmetic():
    # (1/1)^2 + (2/2)^2 = 2, exp(-2/2)
    value = kernel_eval(ard(1.0, [1.0, 2.0]), [0.0, 0.0], [1.0, 2.0])
    assert value == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_single_point_gram_plus_jitter():
    K = gram(iso(sf2=3.0), np.array([[0.5]]), jitter=1e-8)
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(3.0 + 1e-8 * 3.0, rel=1e-15)
    assert gram(iso(sf2=3.0), np.array([[0.5]]))[0, 0] == pytest.approx(3.0, rel=1e-15)


def test_duplicate_points_rank_one():
    X = np.ones((3, 2))
    K = gram(iso(sf2=1.7), X, X)
    np.testing.assert_array_equal(K, np.full((3, 3), 1.7))
    assert np.linalg.matrix_rank(K) == 1


def test_random_gram_psd_by_eigendecomposition(rng):
    X = rng.randn(5, 3)
    K = gram(ard(1.3, [0.7, 1.1, 2.0]), X)
    assert np.linalg.eigvalsh(K).min() >= 0


def test_gram_matches_broadcast_oracle(rng):
    X, Y = rng.randn(7, 2), rng.randn(4, 2)
    spec = ard(0.8, [0.5, 1.5])
    np.testing.assert_allclose(gram(spec, X, Y), se_kernel(X, Y, 0.8, [0.5, 1.5]), rtol=1e-13)
    np.testing.assert_array_equal(kdiag(spec, X), np.full(7, 0.8))


def test_chol_solve_examples(rng):
    b = rng.randn(4, 2)
    np.testing.assert_allclose(chol_solve(np.eye(4), b), b, rtol=1e-14)
    np.testing.assert_allclose(chol_solve(np.array([[4.0]]), np.array([8.0])), [2.0])
    B = rng.randn(6, 6)
    A = B @ B.T + 6 * np.eye(6)
    rhs = rng.randn(6, 3)
    assert np.max(np.abs(A @ chol_solve(A, rhs) - rhs)) < 1e-9


def test_jitter_escalates_on_singular_matrix():
    A = np.ones((3, 3))
    L, jitter = jitter_cholesky(A)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(3), atol=1e-12)


def test_well_conditioned_matrix_factorized_without_jitter(rng):
    X = np.linspace(0, 5, 6)[:, None]
    K = gram(iso(), X)
    L, jitter = jitter_cholesky(K)
    assert jitter == 0.0
    np.testing.assert_allclose(L @ L.T, K, atol=1e-14)


def test_numerically_singular_gram_gets_jitter():
    # 40 points in a unit interval with lengthscale 2: singular to working precision
    X = np.linspace(0, 1, 40)[:, None]
    _, jitter = jitter_cholesky(gram(iso(2.0, 2.0), X), scale=2.0)
    assert jitter >= 1e-8 * 2.0


def test_jitter_gives_up_on_indefinite_matrix():
    with pytest.raises(NumericalError) as info:
        jitter_cholesky(np.diag([1.0, -1.0]))
    assert info.value.jitter > 0


def test_theta_round_trip():
    spec = ard(2.0, [0.3, 4.0])
    assert spec.with_theta(spec.theta) == spec
    assert KernelSpec.from_dict(spec.to_dict()) == spec


def test_from_data_initialization():
    X = np.column_stack([np.linspace(0, 1, 11), np.zeros(11)])
    spec = KernelSpec.from_data("se-ard", X)
    assert spec.signal_var == 1.0
    np.testing.assert_allclose(spec.lengthscales, [X[:, 0].std(), 1.0])


finite = st.floats(-5, 5, allow_nan=False)
log_params = st.floats(-2, 2, allow_nan=False)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), log_params, log_params)
def test_kernel_symmetric_and_bounded(s, s2, lsf2, lell):
    spec = KernelSpec("se-iso", lsf2, (lell,))
    k = kernel_eval(spec, s, s2)
    assert k == kernel_eval(spec, s2, s)
    assert k <= spec.signal_var * (1 + 1e-12)
    if np.array_equal(s, s2):
        assert k == pytest.approx(spec.signal_var, rel=1e-12)
    elif np.sum(((s - s2) / spec.lengthscales) ** 2) > 1e-10:
        # below that the gap is lost to rounding
        assert k < spec.signal_var
    assert k >= 0


@given(arrays(float, (6, 2), elements=finite), log_params, arrays(float, 2, elements=log_params))
def test_self_gram_symmetric_and_factorizable(X, lsf2, lells):
    spec = KernelSpec("se-ard", lsf2, tuple(lells))
    K = gram(spec, X)
    assert np.max(np.abs(K - K.T)) <= 1e-12
    assert np.all(np.isfinite(spec.lengthscales)) and np.all(spec.lengthscales > 0)
    L, _ = jitter_cholesky(K, scale=spec.signal_var)
    assert np.all(np.isfinite(L))
