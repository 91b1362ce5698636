import io
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgpps.episodes import J_OLD_FLOOR, Episode, build_weights, elite_reuse, read_jsonl
from sgpps.kernels import KernelSpec
from sgpps.sparse import conditional, select_pseudo_inputs
from sgpps.verification import se_kernel


def iso(sf2=1.0, ell=1.0):
    return KernelSpec("se-iso", np.log(sf2), (np.log(ell),))


def one_step(ret, state=0.0, action=0.0):
    return Episode(np.array([[state]]), np.array([[action]]), np.array([ret]))


# --- pseudo-inputs ---------------------------------------------------------


def test_twenty_centres_inside_bounding_box(rng):
    X = rng.uniform([-1, 0], [2, 5], size=(2000, 2))
    Z = select_pseudo_inputs(X, 20, seed=0)
    assert Z.shape == (20, 2)
    assert np.all(Z >= X.min(axis=0)) and np.all(Z <= X.max(axis=0))
    dists = np.linalg.norm(Z[:, None] - Z[None], axis=-1)[np.triu_indices(20, 1)]
    assert dists.min() > 0


def test_single_state():
    Z = select_pseudo_inputs(np.array([[0.3, 0.1]]), 5, seed=0)
    np.testing.assert_array_equal(Z, [[0.3, 0.1]])


def test_two_clusters_match_exhaustive_split(rng):
    X = np.vstack([rng.randn(15, 2) * 0.1, rng.randn(15, 2) * 0.1 + 5.0])
    Z = select_pseudo_inputs(X, 2, seed=3)
    # oracle: the best 2-partition of 30 points by brute force over
    # splits along the first principal axis
    order = np.argsort(X[:, 0] + X[:, 1])
    best = min(
        ((np.sum((X[order[:k]] - X[order[:k]].mean(0)) ** 2) + np.sum((X[order[k:]] - X[order[k:]].mean(0)) ** 2)), k)
        for k in range(1, 30)
    )
    centres = np.sort([X[order[: best[1]]].mean(0)[0], X[order[best[1] :]].mean(0)[0]])
    np.testing.assert_allclose(np.sort(Z[:, 0]), centres, atol=1e-8)


def test_pseudo_inputs_seeded():
    X = np.random.RandomState(1).randn(300, 2)
    np.testing.assert_array_equal(select_pseudo_inputs(X, 10, seed=4), select_pseudo_inputs(X, 10, seed=4))


# --- conditional -----------------------------------------------------------


def test_conditional_at_pseudo_inputs(rng):
    Z = rng.randn(6, 2)
    cond = conditional(iso(1.5, 0.8), Z, Z)
    np.testing.assert_allclose(cond.A, np.eye(6), atol=1e-8)
    np.testing.assert_allclose(cond.lam, 0.0, atol=1e-8)


def test_conditional_far_away_reverts_to_prior(rng):
    Z = rng.randn(4, 1)
    cond = conditional(iso(2.0, 0.3), np.array([[1e3]]), Z)
    np.testing.assert_allclose(cond.A, 0.0, atol=1e-12)
    assert cond.lam[0] == pytest.approx(2.0)


def test_conditional_variance_matches_dense_schur(rng):
    S, Z = rng.randn(12, 2), rng.randn(12, 2)
    cond = conditional(iso(1.2, 0.9), S, Z)
    Kuu = se_kernel(Z, Z, 1.2, [0.9])
    Kuf = se_kernel(Z, S, 1.2, [0.9])
    lam = 1.2 - np.sum(Kuf * np.linalg.solve(Kuu, Kuf), axis=0)
    np.testing.assert_allclose(cond.lam, np.maximum(lam, 0), atol=1e-8)
    assert np.all(cond.lam >= -1e-10)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_adding_pseudo_inputs_never_raises_lam(seed, n_small, n_extra):
    r = np.random.RandomState(seed)
    S = r.uniform(-3, 3, size=(20, 1))
    Z = r.uniform(-3, 3, size=(n_small + n_extra, 1))
    spec = iso(1.0, 1.0)
    lam_small = conditional(spec, S, Z[:n_small]).lam
    lam_big = conditional(spec, S, Z).lam
    assert np.all(lam_big <= lam_small + 1e-8)


# --- weights ---------------------------------------------------------------


def test_weights_forced_by_formula():
    batch = build_weights([one_step(100.0), one_step(0.0)], j_old=50.0)
    np.testing.assert_allclose(batch.weights, [1.0, 0.0])


def test_equal_returns_give_uniform_weights():
    batch = build_weights([one_step(3.0)] * 4)
    np.testing.assert_allclose(batch.weights, np.full(4, np.sqrt(1 / 4)))


def test_sweep_returns_shift_hand_arithmetic():
    good = Episode(np.zeros((4, 1)), np.zeros((4, 1)), [-0.1, -0.1, -0.1, 9.9])
    bad = Episode(np.zeros((20, 1)), np.zeros((20, 1)), np.full(20, -0.1))
    batch = build_weights([good, bad])
    np.testing.assert_allclose(batch.returns, [9.6, -2.0])
    np.testing.assert_allclose(batch.shifted_returns, [11.6, 0.0])
    assert batch.j_old == pytest.approx(5.8)
    np.testing.assert_allclose(batch.episode_weights, [1.0, 0.0])
    np.testing.assert_allclose(batch.weights, [1.0] * 4 + [0.0] * 20)


def test_all_zero_returns_flagged_degenerate():
    batch = build_weights([one_step(0.0), one_step(0.0)])
    assert batch.degenerate


def test_weighted_actions_exact(rng):
    eps = [Episode(rng.randn(3, 1), rng.randn(3, 2), rng.rand(3)) for _ in range(4)]
    batch = build_weights(eps)
    np.testing.assert_array_equal(batch.weighted_actions, batch.weights[:, None] * batch.actions)


returns_st = arrays(float, st.integers(1, 12), elements=st.floats(-50, 100, allow_nan=False))


@given(returns_st)
def test_weights_normalized(returns):
    batch = build_weights([one_step(r) for r in returns])
    assert np.all(batch.weights >= 0)
    # below the floor J_old is no longer the empirical mean
    if not batch.degenerate and batch.shifted_returns.mean() >= J_OLD_FLOOR:
        E = len(returns)
        total = np.sum(batch.shifted_returns / (batch.j_old * E))
        assert total == pytest.approx(1.0, abs=1e-10)
        assert np.sum(batch.episode_weights**2) == pytest.approx(1.0, abs=1e-10)


@given(returns_st, st.randoms(use_true_random=False))
def test_weights_permutation_invariant(returns, random):
    perm = list(range(len(returns)))
    random.shuffle(perm)
    a = build_weights([one_step(r) for r in returns])
    b = build_weights([one_step(returns[i]) for i in perm])
    np.testing.assert_allclose(b.weights, a.weights[perm], rtol=1e-12, atol=0)


# --- elite reuse -----------------------------------------------------------


def test_elites_180(rng):
    history = [[one_step(r) for r in rng.rand(100)]]
    fresh = [one_step(r) for r in rng.rand(100)]
    assert len(elite_reuse(history, fresh, 80)) == 180


def test_empty_history_is_fresh_only():
    fresh = [one_step(1.0), one_step(2.0)]
    batch = elite_reuse([], fresh, 80)
    assert [ep.ret for ep in batch.episodes] == [1.0, 2.0]


def test_elites_are_the_best_by_sort():
    history = [[one_step(5.0), one_step(1.0), one_step(9.0)]]
    batch = elite_reuse(history, [], 2)
    assert sorted(ep.ret for ep in batch.episodes) == [5.0, 9.0]


@given(st.lists(st.integers(-5, 5), min_size=0, max_size=15), st.integers(0, 20))
def test_elites_match_sort_oracle(past, keep):
    batch = elite_reuse([[one_step(float(r)) for r in past]], [one_step(0.0)], keep)
    kept = sorted((ep.ret for ep in batch.episodes[1:]), reverse=True)
    assert kept == sorted(map(float, past), reverse=True)[:keep]


def test_jsonl_round_trip(rng):
    eps = [Episode(rng.randn(2, 1), rng.randn(2, 1), rng.rand(2)) for _ in range(3)]
    buf = io.StringIO()
    build_weights(eps).to_jsonl(buf)
    buf.seek(0)
    back = read_jsonl(buf)
    for a, b in itertools.zip_longest(eps, back):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.rewards, b.rewards)
