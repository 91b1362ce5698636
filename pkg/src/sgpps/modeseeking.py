"""Mode-seeking sparse-GP policy with a student-t return-weighted likelihood.

The student-t is written as a scale mixture: every datum has a precision
``tau_n ~ Gam(nu/2, nu sigma^2/2)`` and, given ``tau_n``, a Gaussian
likelihood for its weighted action. Data that sit far from the fitted
branch get small reliabilities ``E[tau_n] = a_n / b_n`` and stop pulling
the mean, so the policy commits to one branch instead of averaging.

Each action dimension is an independent model with its own kernel, noise
and reliabilities. Internally q(f_bar) is stored in whitened coordinates,
as in :mod:`sgpps.multimodal`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import digamma, gammaln
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import _check_sample_weight, check_array, check_is_fitted, check_X_y

from .kernels import KernelSpec, NumericalError, gram, jitter_cholesky
from .multimodal import initial_noise_var
from .optim import gradient_ascent
from .sparse import conditional, select_pseudo_inputs

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class StudentTConfig:
    """Kernel plus student-t likelihood parameters for one action dimension.

    The precision prior is ``Gam(nu/2, nu * sigma^2 / 2)`` (shape, rate).
    """

    kernel: KernelSpec
    log_noise_var: float
    dof: float = 4.0

    def __post_init__(self):
        if not self.dof > 0:
            raise ValueError("degrees of freedom must be positive")
        if not np.isfinite(self.log_noise_var):
            raise ValueError("noise variance must be finite and positive")

    @property
    def noise_var(self):
        return float(np.exp(self.log_noise_var))

    @property
    def prior_shape(self):
        return 0.5 * self.dof

    @property
    def prior_rate(self):
        return 0.5 * self.dof * self.noise_var

    @property
    def theta(self):
        return np.concatenate([self.kernel.theta, [self.log_noise_var]])

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        return replace(self, kernel=self.kernel.with_theta(theta[:-1]), log_noise_var=float(theta[-1]))

    def to_dict(self):
        return {"kernel": self.kernel.to_dict(), "log_noise_var": self.log_noise_var, "dof": self.dof}

    @classmethod
    def from_dict(cls, d):
        return cls(KernelSpec.from_dict(d["kernel"]), float(d["log_noise_var"]), float(d["dof"]))


@dataclass(frozen=True)
class ModeSeekingPosterior:
    """q(f_bar) = N(mu, C) and q(tau_n) = Gam(shape_n, rate_n) for one action dimension.

    Attributes
    ----------
    m, S : ndarray (L,), (L, L)
        Whitened mean and covariance.
    chol : ndarray (L, L)
        Cholesky factor of the pseudo-input Gram matrix.
    shape, rate : ndarray (N,)
        Gamma parameters a_n, b_n of the reliabilities.
    """

    m: np.ndarray
    S: np.ndarray
    chol: np.ndarray
    shape: np.ndarray
    rate: np.ndarray

    @property
    def mu(self):
        return self.chol @ self.m

    @property
    def C(self):
        return self.chol @ self.S @ self.chol.T

    @property
    def reliability(self):
        """Mean reliabilities a_n / b_n."""
        return self.shape / self.rate


def initial_reliabilities(n_samples, config):
    """Gaussian start: E[tau_n] = 1 / sigma^2 with the updated shape."""
    shape = np.full(n_samples, 0.5 * (config.dof + 1.0))
    return shape, shape * config.noise_var


def update_qf(weights, actions, cond, shape, rate):
    """Closed-form q(f_bar) given the reliabilities; returns whitened (m, S)."""
    w = np.asarray(weights, dtype=float)
    a = np.asarray(actions, dtype=float)
    tau = np.asarray(shape, dtype=float) / np.asarray(rate, dtype=float)
    if np.any(tau < 0) or not np.all(np.isfinite(tau)):
        raise NumericalError("reliabilities must be finite and non-negative")
    d = w**2 * tau
    G = np.eye(cond.n_inducing) + (cond.V * d) @ cond.V.T
    Lg, _ = jitter_cholesky(G, scale=1.0)
    m = cho_solve((Lg, True), cond.V @ (d * a), check_finite=False)
    S = cho_solve((Lg, True), np.eye(cond.n_inducing), check_finite=False)
    return m, 0.5 * (S + S.T)


def _expected_sq(weights, actions, cond, m, S):
    """w_n^2 E_q[(a_n - f_n)^2] including the conditional variance lam_n."""
    mean_f = cond.V.T @ m
    var_f = np.einsum("ln,ln->n", cond.V, S @ cond.V)
    return weights**2 * ((actions - mean_f) ** 2 + var_f + cond.lam)


def update_qtau(weights, actions, cond, m, S, config):
    """Closed-form q(tau_n) = Gam(a_n, b_n) given q(f_bar)."""
    w = np.asarray(weights, dtype=float)
    a = np.asarray(actions, dtype=float)
    shape = np.full(w.shape[0], config.prior_shape + 0.5)
    rate = config.prior_rate + 0.5 * _expected_sq(w, a, cond, m, S)
    if np.any(rate <= 0) or not np.all(np.isfinite(rate)):
        raise NumericalError("reliability rate is not positive")
    return shape, rate


def gamma_kl(shape, rate, shape0, rate0):
    """KL(Gam(shape, rate) || Gam(shape0, rate0)), elementwise."""
    return (
        (shape - shape0) * digamma(shape)
        - gammaln(shape)
        + gammaln(shape0)
        + shape0 * (np.log(rate) - np.log(rate0))
        + shape * (rate0 - rate) / rate
    )


def elbo_terms(weights, actions, cond, posterior, config):
    """Named pieces of the lower bound; :func:`elbo` is their sum."""
    w = np.asarray(weights, dtype=float)
    a = np.asarray(actions, dtype=float)
    p = posterior
    tau = p.reliability
    mean_f = cond.V.T @ p.m
    var_f = np.einsum("ln,ln->n", cond.V, p.S @ cond.V)
    sign, logdet = np.linalg.slogdet(p.S)
    if sign <= 0:
        raise NumericalError("posterior covariance is not positive definite")
    L = p.m.shape[0]
    return {
        "log_2pi": -0.5 * w.shape[0] * LOG_2PI,
        "log_precision": 0.5 * float(np.sum(digamma(p.shape) - np.log(p.rate))),
        "residual": -0.5 * float(np.sum(tau * w**2 * (a - mean_f) ** 2)),
        "trace": -0.5 * float(np.sum(tau * w**2 * var_f)),
        "conditional": -0.5 * float(np.sum(tau * w**2 * cond.lam)),
        "kl_f": -0.5 * float(np.trace(p.S) - L - logdet + p.m @ p.m),
        "kl_tau": -float(np.sum(gamma_kl(p.shape, p.rate, config.prior_shape, config.prior_rate))),
    }


def elbo(weights, actions, cond, posterior, config):
    """Variational lower bound for arbitrary q(f_bar), q(tau).

    The expected log precision uses the digamma function; the KL terms
    enter with a negative sign (``kl_f`` and ``kl_tau`` are stored signed).
    """
    if np.asarray(weights).shape[0] == 0:
        return 0.0
    t = elbo_terms(weights, actions, cond, posterior, config)
    for name, value in t.items():
        if not np.isfinite(value):
            raise NumericalError(f"lower bound term {name!r} is not finite")
    return float(sum(t.values()))


def collapsed_elbo(weights, actions, cond, shape, rate, config):
    """Lower bound with q(f_bar) at its optimum for the given q(tau)."""
    w = np.asarray(weights, dtype=float)
    a = np.asarray(actions, dtype=float)
    if w.shape[0] == 0:
        return 0.0
    tau = shape / rate
    d = w**2 * tau
    G = np.eye(cond.n_inducing) + (cond.V * d) @ cond.V.T
    Lg, _ = jitter_cholesky(G, scale=1.0)
    proj = solve_triangular(Lg, cond.V @ (d * a), lower=True, check_finite=False)
    quad = float(np.sum(d * a * a) - np.sum(proj * proj))
    value = (
        -0.5 * w.shape[0] * LOG_2PI
        + 0.5 * np.sum(digamma(shape) - np.log(rate))
        - 0.5 * np.sum(d * cond.lam)
        - 0.5 * quad
        - np.sum(np.log(np.diag(Lg)))
        - np.sum(gamma_kl(shape, rate, config.prior_shape, config.prior_rate))
    )
    return float(value)


def mstep(weights, actions, pseudo_inputs, S, shape, rate, config, max_iter=50, gtol=1e-7):
    """Ascend the bound in the kernel hypers and log sigma^2 with q(tau) held fixed.

    q(f_bar) is re-optimized inside the objective; ``dof`` stays fixed.
    """
    w = np.asarray(weights, dtype=float)
    a = np.asarray(actions, dtype=float)

    def fun(x):
        c = config.with_theta(x)
        return collapsed_elbo(w, a, conditional(c.kernel, S, pseudo_inputs), shape, rate, c)

    x, _, _ = gradient_ascent(fun, config.theta, max_iter=max_iter, gtol=gtol)
    return config.with_theta(x)


def predict(X, pseudo_inputs, posterior, config):
    """Predictive mean and variance (noise included) at the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    spec = config.kernel
    vs = solve_triangular(posterior.chol, gram(spec, pseudo_inputs, X), lower=True, check_finite=False)
    lam = np.maximum(spec.signal_var - np.einsum("ln,ln->n", vs, vs), 0.0)
    explained = np.maximum(np.einsum("ln,ln->n", vs, posterior.S @ vs), 0.0)
    return vs.T @ posterior.m, lam + explained + config.noise_var


class ModeSeekingSGPPolicy(BaseEstimator):
    """Sparse-GP policy with a student-t return-weighted likelihood.

    ``fit(X, y, sample_weight)`` takes visited states, executed actions and
    per-step return weights. Every action dimension is fit independently.
    Samples with zero weight are left out of the fit.

    Parameters
    ----------
    n_pseudo_inputs : int, default=20
    kernel : {"se-iso", "se-ard"}, default="se-iso"
    signal_var : float, default=1.0
    noise_var : float or "auto", default="auto"
        Initial student-t scale sigma^2 in the space of the weighted
        actions; ``"auto"`` uses 1% of the mean squared weighted action.
    dof : float, default=4.0
        Degrees of freedom nu (fixed).
    max_em_rounds : int, default=20
    em_tol : float, default=1e-5
    max_sweeps : int, default=100
    sweep_tol : float, default=1e-6
    mstep_max_iter : int, default=50
    optimize_hypers : bool, default=True
    warm_start : bool, default=False
        Reuse pseudo-inputs and hyperparameters from the previous fit.
    random_state : int, RandomState or None
        Seeds the pseudo-input k-means.
    """

    def __init__(
        self,
        n_pseudo_inputs=20,
        kernel="se-iso",
        signal_var=1.0,
        noise_var="auto",
        dof=4.0,
        max_em_rounds=20,
        em_tol=1e-5,
        max_sweeps=100,
        sweep_tol=1e-6,
        mstep_max_iter=50,
        optimize_hypers=True,
        warm_start=False,
        random_state=None,
    ):
        self.n_pseudo_inputs = n_pseudo_inputs
        self.kernel = kernel
        self.signal_var = signal_var
        self.noise_var = noise_var
        self.dof = dof
        self.max_em_rounds = max_em_rounds
        self.em_tol = em_tol
        self.max_sweeps = max_sweeps
        self.sweep_tol = sweep_tol
        self.mstep_max_iter = mstep_max_iter
        self.optimize_hypers = optimize_hypers
        self.warm_start = warm_start
        self.random_state = random_state

    def _validate_params(self):
        if int(self.n_pseudo_inputs) < 1:
            raise ValueError("n_pseudo_inputs must be at least 1")
        if not self.signal_var > 0:
            raise ValueError("signal_var must be positive")
        if self.noise_var != "auto" and not self.noise_var > 0:
            raise ValueError("noise_var must be positive or 'auto'")
        if not self.dof > 0:
            raise ValueError("dof must be positive")

    def fit(self, X, y, sample_weight=None):
        self._validate_params()
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        Y = y[:, None] if y.ndim == 1 else y
        w = _check_sample_weight(sample_weight, X)
        if np.any(w < 0):
            raise ValueError("sample weights must be non-negative")
        rng = check_random_state(self.random_state)
        support = np.flatnonzero(w > 0)
        Xs, Ys, ws = X[support], Y[support], w[support]
        if self.warm_start and hasattr(self, "hypers_"):
            if X.shape[1] != self.n_features_in_ or Y.shape[1] != self.n_outputs_:
                raise ValueError("warm start with data of a different shape")
        else:
            seed = rng.randint(np.iinfo(np.int32).max)
            self.pseudo_inputs_ = select_pseudo_inputs(X, self.n_pseudo_inputs, seed=seed)
            base = KernelSpec.from_data(self.kernel, X, signal_var=self.signal_var)
            self.hypers_ = [
                StudentTConfig(
                    base,
                    float(np.log(initial_noise_var(self.noise_var, ws * Ys[:, k], self.signal_var))),
                    float(self.dof),
                )
                for k in range(Y.shape[1])
            ]
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        self.support_ = support

        posteriors, hypers, traces, rounds = [], [], [], []
        for k in range(Y.shape[1]):
            post, config, trace, n_round = self._em(Xs, Ys[:, k], ws, self.hypers_[k])
            posteriors.append(post)
            hypers.append(config)
            traces.append(trace)
            rounds.append(n_round)
        self.posteriors_ = posteriors
        self.hypers_ = hypers
        self.elbo_trace_ = traces
        self.elbo_ = float(sum(t[-1] for t in traces if t))
        self.n_iter_ = max(rounds)
        return self

    def _em(self, Xs, a, ws, config):
        cond = conditional(config.kernel, Xs, self.pseudo_inputs_)
        shape, rate = initial_reliabilities(Xs.shape[0], config)
        trace = []
        post, value = self._estep(ws, a, cond, shape, rate, config, trace)
        if Xs.shape[0] == 0:
            return post, config, trace, 0
        n_round = 1
        while self.optimize_hypers and n_round < self.max_em_rounds:
            config = mstep(
                ws, a, self.pseudo_inputs_, Xs, post.shape, post.rate, config, max_iter=self.mstep_max_iter
            )
            cond = conditional(config.kernel, Xs, self.pseudo_inputs_)
            prev = value
            post, value = self._estep(ws, a, cond, post.shape, post.rate, config, trace)
            n_round += 1
            if abs(value - prev) <= self.em_tol * max(1.0, abs(prev)):
                break
        return post, config, trace, n_round

    def _estep(self, w, a, cond, shape, rate, config, trace):
        chol = cond.chol
        prev = None
        value = 0.0
        for _ in range(self.max_sweeps):
            m, S = update_qf(w, a, cond, shape, rate)
            if w.shape[0] == 0:
                break
            trace.append(elbo(w, a, cond, ModeSeekingPosterior(m, S, chol, shape, rate), config))
            shape, rate = update_qtau(w, a, cond, m, S, config)
            value = elbo(w, a, cond, ModeSeekingPosterior(m, S, chol, shape, rate), config)
            trace.append(value)
            if prev is not None and abs(value - prev) <= self.sweep_tol * max(1.0, abs(prev)):
                break
            prev = value
        m, S = update_qf(w, a, cond, shape, rate)
        post = ModeSeekingPosterior(m, S, chol, shape, rate)
        if w.shape[0]:
            value = elbo(w, a, cond, post, config)
            trace.append(value)
        return post, value

    def _check_X(self, X):
        check_is_fitted(self, "posteriors_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} state features, got {X.shape[1]}")
        return X

    def predict_dist(self, X):
        """Predictive means and variances, each of shape (n, A)."""
        X = self._check_X(X)
        out = [predict(X, self.pseudo_inputs_, p, c) for p, c in zip(self.posteriors_, self.hypers_)]
        return np.stack([o[0] for o in out], axis=1), np.stack([o[1] for o in out], axis=1)

    def predict(self, X):
        mean, _ = self.predict_dist(X)
        return mean[:, 0] if self._y_1d else mean

    def sample(self, X, random_state=None):
        """Independent Gaussian draws per action dimension."""
        rng = check_random_state(random_state)
        mean, var = self.predict_dist(X)
        out = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        return out[:, 0] if self._y_1d else out

    @property
    def reliabilities_(self):
        """Mean reliabilities a_n / b_n of the fitted samples, shape (n_support, A)."""
        check_is_fitted(self, "posteriors_")
        return np.stack([p.reliability for p in self.posteriors_], axis=1)

    def to_snapshot(self):
        check_is_fitted(self, "posteriors_")
        return {
            "variant": "modeseeking",
            "params": self.get_params(),
            "n_features_in": int(self.n_features_in_),
            "n_outputs": int(self.n_outputs_),
            "y_1d": bool(self._y_1d),
            "hypers": [c.to_dict() for c in self.hypers_],
            "pseudo_inputs": self.pseudo_inputs_.tolist(),
            "kuu_jitter": [
                jitter_cholesky(gram(c.kernel, self.pseudo_inputs_), scale=c.kernel.signal_var)[1]
                for c in self.hypers_
            ],
            "mu": [p.mu.tolist() for p in self.posteriors_],
            "Sigma": [p.C.tolist() for p in self.posteriors_],
            "whitened_mean": [p.m.tolist() for p in self.posteriors_],
            "whitened_cov": [p.S.tolist() for p in self.posteriors_],
            "shape": [p.shape.tolist() for p in self.posteriors_],
            "rate": [p.rate.tolist() for p in self.posteriors_],
            "support": self.support_.tolist(),
            "elbo": self.elbo_,
        }

    @classmethod
    def from_snapshot(cls, snap):
        self = cls(**dict(snap["params"]))
        self.n_features_in_ = int(snap["n_features_in"])
        self.n_outputs_ = int(snap["n_outputs"])
        self._y_1d = bool(snap["y_1d"])
        self.hypers_ = [StudentTConfig.from_dict(d) for d in snap["hypers"]]
        self.pseudo_inputs_ = np.asarray(snap["pseudo_inputs"], dtype=float).reshape(-1, self.n_features_in_)
        self.support_ = np.asarray(snap["support"], dtype=int)
        self.posteriors_ = []
        for k, c in enumerate(self.hypers_):
            chol = jitter_cholesky(gram(c.kernel, self.pseudo_inputs_), scale=c.kernel.signal_var)[0]
            self.posteriors_.append(
                ModeSeekingPosterior(
                    m=np.asarray(snap["whitened_mean"][k], dtype=float),
                    S=np.asarray(snap["whitened_cov"][k], dtype=float),
                    chol=chol,
                    shape=np.asarray(snap["shape"][k], dtype=float),
                    rate=np.asarray(snap["rate"][k], dtype=float),
                )
            )
        self.elbo_ = snap.get("elbo")
        self.elbo_trace_ = []
        self.n_iter_ = 0
        return self
