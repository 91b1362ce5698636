"""Pseudo-input selection and the sparse GP conditional p(f | f_bar)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.cluster import KMeans

from .kernels import gram, jitter_cholesky, kdiag


@dataclass(frozen=True)
class SGPConditional:
    """Projection of N states onto L pseudo-inputs.

    Stores the pieces every variational update needs: the pseudo-input
    Gram matrix ``Kuu`` and its lower Cholesky factor ``chol``, the
    whitened cross-covariance ``V = chol^-1 K_{S_bar,S}`` (L x N) and
    the conditional variances ``lam`` (clamped at zero).
    """

    Kuu: np.ndarray
    chol: np.ndarray
    V: np.ndarray
    lam: np.ndarray

    @property
    def n_samples(self):
        return self.V.shape[1]

    @property
    def n_inducing(self):
        return self.V.shape[0]

    @property
    def A(self):
        """``K_{S,S_bar} K_{S_bar}^-1`` as an (N, L) array."""
        return solve_triangular(self.chol.T, self.V, lower=False, check_finite=False).T


def select_pseudo_inputs(states, n_inducing, seed=0):
    """Pick ``n_inducing`` pseudo-inputs by k-means over the visited states.

    When there are no more distinct states than requested, the distinct
    states themselves are returned.
    """
    if n_inducing < 1:
        raise ValueError("number of pseudo-inputs must be at least 1")
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise ValueError("need at least one state to place pseudo-inputs")
    distinct = np.unique(X, axis=0)
    if distinct.shape[0] <= n_inducing:
        return distinct
    km = KMeans(n_clusters=n_inducing, init="k-means++", n_init=1, max_iter=50, random_state=seed)
    km.fit(X)
    return np.unique(km.cluster_centers_, axis=0)


def conditional(spec, S, pseudo_inputs):
    """Sparse conditional of f(S) given pseudo-outputs at ``pseudo_inputs``."""
    Kuu = gram(spec, pseudo_inputs)
    chol, extra = jitter_cholesky(Kuu, scale=spec.signal_var)
    if extra:
        Kuu = Kuu + extra * np.eye(Kuu.shape[0])
    Kuf = gram(spec, pseudo_inputs, S)
    V = solve_triangular(chol, Kuf, lower=True, check_finite=False)
    lam = kdiag(spec, S) - np.einsum("ln,ln->n", V, V)
    return SGPConditional(Kuu=Kuu, chol=chol, V=V, lam=np.maximum(lam, 0.0))
