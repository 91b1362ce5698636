"""Squared-exponential kernels, Gram matrices and jittered Cholesky solves.

Hyperparameters live in log-space so that the M-step can optimize them
without constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

FAMILIES = ("se-iso", "se-ard")

#: first relative jitter tried when a plain factorization fails
DEFAULT_JITTER = 1e-8
#: largest relative jitter tried before giving up on a factorization
MAX_JITTER = 1e-2
#: a plain factor whose squared pivot ratio falls below this is treated as
#: failed: the matrix is singular to working precision
MIN_PIVOT_RATIO = 1e-15


class NumericalError(ArithmeticError):
    """Raised when a linear-algebra step cannot be completed.

    ``jitter`` carries the last diagonal jitter that was tried, if any.
    """

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel with log-parameterized hyperparameters.

    Parameters
    ----------
    family : {"se-iso", "se-ard"}
        Isotropic kernel (one lengthscale) or automatic relevance
        determination (one lengthscale per input dimension).
    log_signal_var : float
        Log of the signal variance.
    log_lengthscales : tuple of float
        Log lengthscales; length 1 for ``se-iso``.
    """

    family: str
    log_signal_var: float
    log_lengthscales: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ells = tuple(float(v) for v in np.atleast_1d(self.log_lengthscales))
        object.__setattr__(self, "log_lengthscales", ells)
        object.__setattr__(self, "log_signal_var", float(self.log_signal_var))
        if self.family == "se-iso" and len(ells) != 1:
            raise ValueError("se-iso kernel takes exactly one lengthscale")
        if len(ells) == 0:
            raise ValueError("at least one lengthscale is required")
        values = np.exp(np.array((self.log_signal_var,) + ells))
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("kernel hyperparameters must be finite and positive")

    @property
    def signal_var(self):
        return float(np.exp(self.log_signal_var))

    @property
    def lengthscales(self):
        return np.exp(np.asarray(self.log_lengthscales))

    @property
    def input_dim(self):
        """Required input dimension, or None for the isotropic kernel."""
        return len(self.log_lengthscales) if self.family == "se-ard" else None

    @property
    def n_params(self):
        return 1 + len(self.log_lengthscales)

    @property
    def theta(self):
        return np.array((self.log_signal_var,) + self.log_lengthscales)

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        return KernelSpec(self.family, theta[0], tuple(theta[1:]))

    @classmethod
    def from_data(cls, family, X, signal_var=1.0):
        """Initial kernel: unit signal variance, lengthscales = per-dimension std of ``X``.

        Dimensions with zero spread fall back to a lengthscale of 1.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        std = X.std(axis=0) if X.shape[0] > 0 else np.ones(X.shape[1])
        std = np.where(std > 0, std, 1.0)
        if family == "se-iso":
            std = np.array([float(np.mean(std))])
        return cls(family, np.log(signal_var), tuple(np.log(std)))

    def to_dict(self):
        return {
            "family": self.family,
            "log_signal_var": self.log_signal_var,
            "log_lengthscales": list(self.log_lengthscales),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d["log_signal_var"], tuple(d["log_lengthscales"]))


def _check_dim(spec, D):
    if spec.input_dim is not None and spec.input_dim != D:
        raise ValueError(f"kernel expects {spec.input_dim}-dimensional inputs, got {D}")


def kernel_eval(spec, s, s2):
    """k(s, s2) = sf2 * exp(-0.5 * sum_d (s_d - s2_d)^2 / l_d^2)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    if s.shape != s2.shape or s.ndim != 1:
        raise ValueError(f"state shapes differ: {s.shape} vs {s2.shape}")
    _check_dim(spec, s.shape[0])
    r = (s - s2) / spec.lengthscales
    return spec.signal_var * float(np.exp(-0.5 * np.dot(r, r)))


def _as_states(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("states must be a 2-D array (n_samples, n_features)")
    return X


def gram(spec, X, Y=None, jitter=0.0):
    """Cross-covariance ``k(X, Y)``.

    With ``Y=None`` the self-Gram ``k(X, X)`` is returned with
    ``jitter * signal_var`` added to its diagonal (none by default;
    :func:`jitter_cholesky` adds what a factorization needs).
    """
    X = _as_states(X)
    _check_dim(spec, X.shape[1])
    ell = spec.lengthscales
    if Y is None:
        d2 = cdist(X / ell, X / ell, "sqeuclidean")
        K = spec.signal_var * np.exp(-0.5 * d2)
        K[np.diag_indices_from(K)] += jitter * spec.signal_var
        return K
    Y = _as_states(Y)
    if Y.shape[1] != X.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d2 = cdist(X / ell, Y / ell, "sqeuclidean")
    return spec.signal_var * np.exp(-0.5 * d2)


def kdiag(spec, X):
    """Prior variances k(x, x) for every row of ``X``."""
    X = _as_states(X)
    _check_dim(spec, X.shape[1])
    return np.full(X.shape[0], spec.signal_var)


def jitter_cholesky(A, scale=None, max_jitter=MAX_JITTER):
    """Lower Cholesky factor of ``A``, escalating diagonal jitter on failure.

    The first attempt uses ``A`` as given and is kept unless it fails or
    its pivots show ``A`` to be singular to working precision. Later
    attempts add ``1e-8 * scale``, then ten times more, up to
    ``max_jitter * scale``. ``scale`` defaults to the mean of the diagonal.

    Returns
    -------
    L : ndarray
    jitter : float
        Extra jitter that was added (0 when none was needed).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries", jitter=0.0)
    if A.shape[0] == 0:
        return np.zeros((0, 0)), 0.0
    if scale is None:
        scale = float(np.mean(np.abs(np.diag(A)))) or 1.0
    n_steps = int(round(np.log10(max_jitter / DEFAULT_JITTER)))
    schedule = [0.0] + [DEFAULT_JITTER * scale * 10**k for k in range(n_steps + 1)]
    eye = np.eye(A.shape[0])
    for jitter in schedule:
        try:
            L = linalg.cholesky(A + jitter * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        d = np.abs(np.diag(L))
        if jitter > 0 or (d.min() / d.max()) ** 2 >= MIN_PIVOT_RATIO:
            return L, jitter
    raise NumericalError(f"Cholesky failed even with jitter {schedule[-1]:.3g}", jitter=schedule[-1])


def chol_solve(A, B, scale=None):
    """Solve ``A X = B`` for symmetric positive (semi-)definite ``A``."""
    L, _ = jitter_cholesky(A, scale=scale)
    return linalg.cho_solve((L, True), np.asarray(B, dtype=float), check_finite=False)
