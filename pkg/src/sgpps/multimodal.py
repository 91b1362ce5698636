"""Multimodal sparse-GP policy: an overlapping mixture of M sparse GPs.

Every component is a global sparse GP over the whole state space; a
variational assignment matrix ``resp`` (N x M) decides which component
explains each return-weighted action. Fitting is variational EM:

* E-step: alternate :func:`update_qf` and :func:`update_qz` until the
  lower bound stops moving;
* M-step: :func:`mstep` ascends the bound in the log-hyperparameters.

All quantities are kept in whitened coordinates ``u = chol(K_S_bar)^-1 f_bar``
internally; ``mu``/``Sigma``/``Q`` on :class:`MultimodalPosterior` give the
unwhitened values. With ``n_components=1`` this is the plain (unimodal)
sparse-GP policy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp, xlogy
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import _check_sample_weight, check_array, check_is_fitted, check_X_y

from .kernels import KernelSpec, NumericalError, gram, jitter_cholesky
from .optim import gradient_ascent
from .sparse import conditional, select_pseudo_inputs

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MultimodalHypers:
    """Per-component kernels, shared policy noise and selection temperature."""

    kernels: tuple
    log_noise_var: float
    temperature: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if not np.isfinite(self.log_noise_var):
            raise ValueError("noise variance must be finite and positive")
        if self.temperature is not None and not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def n_components(self):
        return len(self.kernels)

    @property
    def noise_var(self):
        return float(np.exp(self.log_noise_var))

    @property
    def theta(self):
        return np.concatenate([k.theta for k in self.kernels] + [[self.log_noise_var]])

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        kernels, i = [], 0
        for k in self.kernels:
            kernels.append(k.with_theta(theta[i : i + k.n_params]))
            i += k.n_params
        return replace(self, kernels=tuple(kernels), log_noise_var=float(theta[i]))

    def to_dict(self):
        return {
            "kernels": [k.to_dict() for k in self.kernels],
            "log_noise_var": self.log_noise_var,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(KernelSpec.from_dict(k) for k in d["kernels"]),
            float(d["log_noise_var"]),
            d.get("temperature"),
        )


@dataclass(frozen=True)
class MultimodalPosterior:
    """q(f_bar^(m)) = N(mu^(m), Sigma^(m)) for every component, plus q(Z).

    Attributes
    ----------
    m : ndarray (M, L, A)
        Whitened means, one column per action dimension.
    S : ndarray (M, L, L)
        Whitened covariances (shared across action dimensions).
    chol : ndarray (M, L, L)
        Cholesky factors of each component's pseudo-input Gram matrix.
    resp : ndarray (N, M)
        Assignment posterior Pi_hat.
    prior : ndarray (N, M)
        Assignment prior Pi.
    """

    m: np.ndarray
    S: np.ndarray
    chol: np.ndarray
    resp: np.ndarray
    prior: np.ndarray = field(repr=False)

    @property
    def n_components(self):
        return self.m.shape[0]

    @property
    def mu(self):
        return np.einsum("mij,mja->mia", self.chol, self.m)

    @property
    def Sigma(self):
        return np.einsum("mij,mjk,mlk->mil", self.chol, self.S, self.chol)

    @property
    def Q(self):
        """Q_L = K_S_bar Sigma^-1 K_S_bar."""
        return np.stack(
            [c @ np.linalg.inv(s) @ c.T for c, s in zip(self.chol, self.S)]
        )

    def with_resp(self, resp):
        return replace(self, resp=resp)


def uniform_prior(n_samples, n_components):
    return np.full((n_samples, n_components), 1.0 / n_components)


def conditionals(hypers, S, pseudo_inputs):
    """One :class:`~sgpps.sparse.SGPConditional` per component."""
    return [conditional(k, S, pseudo_inputs) for k in hypers.kernels]


def _as_targets(actions):
    a = np.asarray(actions, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _component_qf(cond, w, a, resp_m, noise_var):
    v = cond.lam + noise_var
    d = w**2 * resp_m / v
    G = np.eye(cond.n_inducing) + (cond.V * d) @ cond.V.T
    Lg, _ = jitter_cholesky(G, scale=1.0)
    rhs = cond.V @ (d[:, None] * a)
    m = cho_solve((Lg, True), rhs, check_finite=False)
    S = cho_solve((Lg, True), np.eye(cond.n_inducing), check_finite=False)
    return m, 0.5 * (S + S.T)


def update_qf(weights, actions, conds, resp, hypers, prior=None):
    """Closed-form q(f_bar^(m)) for every component given the assignments."""
    w = np.asarray(weights, dtype=float)
    a = _as_targets(actions)
    resp = np.asarray(resp, dtype=float)
    ms, Ss = [], []
    for j, cond in enumerate(conds):
        m, S = _component_qf(cond, w, a, resp[:, j], hypers.noise_var)
        ms.append(m)
        Ss.append(S)
    if prior is None:
        prior = uniform_prior(*resp.shape)
    return MultimodalPosterior(
        m=np.stack(ms),
        S=np.stack(Ss),
        chol=np.stack([c.chol for c in conds]),
        resp=resp,
        prior=prior,
    )


def expected_loglik(weights, actions, conds, posterior, hypers):
    """b_nm = E_q[log N(a_tilde_n | W_nn f_n^(m), lam_n^(m) + sigma^2)], summed over action dims.

    Returns an (N, M) array.
    """
    w = np.asarray(weights, dtype=float)
    a = _as_targets(actions)
    n_dims = a.shape[1]
    out = np.empty((a.shape[0], len(conds)))
    for j, cond in enumerate(conds):
        v = cond.lam + hypers.noise_var
        mean_f = cond.V.T @ posterior.m[j]
        var_f = np.einsum("ln,ln->n", cond.V, posterior.S[j] @ cond.V)
        resid2 = np.sum((w[:, None] * (a - mean_f)) ** 2, axis=1)
        out[:, j] = -0.5 * n_dims * (LOG_2PI + np.log(v)) - (resid2 + n_dims * w**2 * var_f) / (2 * v)
    return out


def update_qz(weights, actions, conds, posterior, hypers):
    """Assignment posterior Pi_hat_nm proportional to Pi_nm exp(b_nm), normalized in log-space."""
    b = expected_loglik(weights, actions, conds, posterior, hypers)
    with np.errstate(divide="ignore"):
        logits = np.log(posterior.prior) + b
    norm = logsumexp(logits, axis=1, keepdims=True)
    bad = ~np.isfinite(norm[:, 0])
    with np.errstate(invalid="ignore"):
        resp = np.exp(logits - norm)
    if np.any(bad):
        logger.warning("%d assignment rows underflowed; resetting them to uniform", int(bad.sum()))
        resp[bad] = 1.0 / resp.shape[1]
    return resp


def _kl_whitened(m, S):
    """KL(N(m, S) || N(0, I)) summed over the columns of ``m`` (S shared)."""
    L = m.shape[0]
    n_dims = m.shape[1]
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise NumericalError("posterior covariance is not positive definite")
    return 0.5 * (n_dims * (np.trace(S) - L - logdet) + np.sum(m * m))


def assignment_kl(resp, prior):
    """KL(q(Z) || p(Z)) with 0 log 0 = 0."""
    return float(np.sum(xlogy(resp, resp) - xlogy(resp, prior)))


def elbo_terms(weights, actions, conds, posterior, hypers):
    """Named pieces of the lower bound; :func:`elbo` is their signed sum."""
    b = expected_loglik(weights, actions, conds, posterior, hypers)
    data = np.sum(posterior.resp * b, axis=0)
    kl_f = np.array([_kl_whitened(posterior.m[j], posterior.S[j]) for j in range(len(conds))])
    return {
        "data": data,
        "kl_f": kl_f,
        "kl_z": assignment_kl(posterior.resp, posterior.prior),
    }


def elbo(weights, actions, conds, posterior, hypers):
    """Variational lower bound log J_L' for arbitrary q(f_bar), q(Z)."""
    if np.asarray(weights).shape[0] == 0:
        return 0.0
    t = elbo_terms(weights, actions, conds, posterior, hypers)
    for name, value in t.items():
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"lower bound term {name!r} is not finite")
    return float(np.sum(t["data"]) - np.sum(t["kl_f"]) - t["kl_z"])


def _collapsed_component(cond, w, a, resp_m, noise_var):
    """One component's share of the bound with q(f_bar^(m)) at its optimum.

    quadratic term - sum_n log R_nn - 1/2 sum_n Pi_hat_nm log 2 pi (lam_n + sigma^2),
    with R = chol(I + B^1/2 W Q_nn W B^1/2); per action dimension.
    """
    n_dims = a.shape[1]
    v = cond.lam + noise_var
    d = w**2 * resp_m / v
    G = np.eye(cond.n_inducing) + (cond.V * d) @ cond.V.T
    Lg, _ = jitter_cholesky(G, scale=1.0)
    rhs = cond.V @ (d[:, None] * a)
    proj = solve_triangular(Lg, rhs, lower=True, check_finite=False)
    quad = np.sum(d[:, None] * a * a) - np.sum(proj * proj)
    half_logdet = np.sum(np.log(np.diag(Lg)))
    return -0.5 * quad - n_dims * half_logdet - 0.5 * n_dims * np.sum(resp_m * (LOG_2PI + np.log(v)))


def collapsed_elbo(weights, actions, conds, resp, hypers, prior=None):
    """Lower bound with every q(f_bar^(m)) at its closed-form optimum.

    Equals :func:`elbo` evaluated right after :func:`update_qf`. The
    log-determinant enters with a negative sign.
    """
    w = np.asarray(weights, dtype=float)
    a = _as_targets(actions)
    if w.shape[0] == 0:
        return 0.0
    resp = np.asarray(resp, dtype=float)
    if prior is None:
        prior = uniform_prior(*resp.shape)
    total = sum(
        _collapsed_component(c, w, a, resp[:, j], hypers.noise_var) for j, c in enumerate(conds)
    )
    return float(total - assignment_kl(resp, prior))


def mstep(weights, actions, pseudo_inputs, S, resp, hypers, prior=None, max_iter=50, gtol=1e-7):
    """Ascend the collapsed bound in the log-hyperparameters with q(Z) held fixed.

    Returns hypers whose bound is no lower than the incoming one; when the
    first line search fails the incoming hypers come back unchanged.
    """
    w = np.asarray(weights, dtype=float)
    a = _as_targets(actions)
    resp = np.asarray(resp, dtype=float)
    if prior is None:
        prior = uniform_prior(*resp.shape)
    sizes = [k.n_params for k in hypers.kernels]
    offsets = np.cumsum([0] + sizes)
    cache = {}

    def cond_for(j, theta_j):
        key = (j, theta_j.tobytes())
        if key not in cache:
            if len(cache) > 64:
                cache.clear()
            cache[key] = conditional(hypers.kernels[j].with_theta(theta_j), S, pseudo_inputs)
        return cache[key]

    def part(j, x):
        theta_j = x[offsets[j] : offsets[j + 1]]
        return _collapsed_component(cond_for(j, theta_j), w, a, resp[:, j], np.exp(x[-1]))

    kl_z = assignment_kl(resp, prior)

    def fun(x):
        return sum(part(j, x) for j in range(len(sizes))) - kl_z

    def partial(i):
        if i == len(x0) - 1:
            return fun
        j = int(np.searchsorted(offsets, i, side="right") - 1)
        return lambda x: part(j, x)

    x0 = hypers.theta
    x, _, _ = gradient_ascent(fun, x0, partial=partial, max_iter=max_iter, gtol=gtol)
    return hypers.with_theta(x)


def predict(X, pseudo_inputs, posterior, hypers):
    """Per-component predictive means (n, M, A) and variances (n, M)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means, variances = [], []
    for j, spec in enumerate(hypers.kernels):
        Ks = gram(spec, pseudo_inputs, X)
        vs = solve_triangular(posterior.chol[j], Ks, lower=True, check_finite=False)
        lam = np.maximum(spec.signal_var - np.einsum("ln,ln->n", vs, vs), 0.0)
        explained = np.maximum(np.einsum("ln,ln->n", vs, posterior.S[j] @ vs), 0.0)
        means.append(vs.T @ posterior.m[j])
        variances.append(lam + explained + hypers.noise_var)
    return np.stack(means, axis=1), np.stack(variances, axis=1)


def component_probabilities(variances, temperature):
    """Softmax over negative predictive variances: p(m) ~ exp(-sigma_m / beta)."""
    z = -np.asarray(variances, dtype=float) / temperature
    return np.exp(z - logsumexp(z, axis=-1, keepdims=True))


def initial_noise_var(noise_var, weighted_targets, signal_var):
    """Starting sigma^2: the given value, or 1% of the mean squared weighted target."""
    if noise_var != "auto":
        return float(noise_var)
    t = np.asarray(weighted_targets, dtype=float)
    if t.size == 0 or not np.any(t):
        return 0.01 * signal_var
    return max(0.01 * float(np.mean(t**2)), 1e-10)


def default_temperature(variances):
    """0.25 times the median predictive variance."""
    return 0.25 * float(np.median(variances))


class MultimodalSGPPolicy(BaseEstimator):
    """Overlapping mixture of sparse GPs fit by return-weighted variational EM.

    ``fit(X, y, sample_weight)`` takes visited states, executed actions and
    the per-step return weights W_nn. Samples with zero weight carry no
    information about the policy mean and are left out of the fit.

    Parameters
    ----------
    n_components : int, default=2
        Number of overlapping GP components M. ``1`` gives the unimodal
        sparse-GP policy.
    n_pseudo_inputs : int, default=20
    kernel : {"se-iso", "se-ard"}, default="se-iso"
    signal_var : float, default=1.0
        Initial signal variance of every component.
    noise_var : float or "auto", default="auto"
        Initial policy noise sigma^2, in the space of the weighted actions.
        ``"auto"`` uses 1% of the mean squared weighted action.
    temperature : float or None, default=None
        Component-selection temperature beta. ``None`` sets it to
        0.25 x median predictive variance at the first sampled action.
    max_em_rounds : int, default=20
        Cap on E-step/M-step rounds.
    em_tol : float, default=1e-5
        Relative bound change that ends the EM rounds.
    max_sweeps : int, default=100
        Cap on q(f)/q(Z) sweeps within one E-step.
    sweep_tol : float, default=1e-6
    mstep_max_iter : int, default=50
    optimize_hypers : bool, default=True
    n_init : int, default=8
        Number of random assignment initializations. Each is run through
        one E-step at the starting hyperparameters and EM continues from
        the one with the highest bound. Ignored when ``n_components=1``.
    warm_start : bool, default=False
        Reuse pseudo-inputs, hyperparameters and temperature from the
        previous fit. The variational posterior is always refit; the
        assignments implied by the previous fit join the screened
        initializations.
    random_state : int, RandomState or None
        Seeds pseudo-input k-means and the assignment initialization.
    """

    def __init__(
        self,
        n_components=2,
        n_pseudo_inputs=20,
        kernel="se-iso",
        signal_var=1.0,
        noise_var="auto",
        temperature=None,
        max_em_rounds=20,
        em_tol=1e-5,
        max_sweeps=100,
        sweep_tol=1e-6,
        mstep_max_iter=50,
        optimize_hypers=True,
        n_init=8,
        warm_start=False,
        random_state=None,
    ):
        self.n_components = n_components
        self.n_pseudo_inputs = n_pseudo_inputs
        self.kernel = kernel
        self.signal_var = signal_var
        self.noise_var = noise_var
        self.temperature = temperature
        self.max_em_rounds = max_em_rounds
        self.em_tol = em_tol
        self.max_sweeps = max_sweeps
        self.sweep_tol = sweep_tol
        self.mstep_max_iter = mstep_max_iter
        self.optimize_hypers = optimize_hypers
        self.n_init = n_init
        self.warm_start = warm_start
        self.random_state = random_state

    def _validate_params(self):
        if int(self.n_components) < 1:
            raise ValueError("n_components must be at least 1")
        if int(self.n_pseudo_inputs) < 1:
            raise ValueError("n_pseudo_inputs must be at least 1")
        if not self.signal_var > 0:
            raise ValueError("signal_var must be positive")
        if self.noise_var != "auto" and not self.noise_var > 0:
            raise ValueError("noise_var must be positive or 'auto'")

    def _initial_hypers(self, X, weighted_targets):
        base = KernelSpec.from_data(self.kernel, X, signal_var=self.signal_var)
        return MultimodalHypers(
            kernels=(base,) * self.n_components,
            log_noise_var=float(np.log(initial_noise_var(self.noise_var, weighted_targets, self.signal_var))),
            temperature=self.temperature,
        )

    def _init_resp(self, n, rng):
        M = self.n_components
        resp = np.full((n, M), 1.0 / M) + rng.uniform(0.0, 0.01, size=(n, M))
        return resp / resp.sum(axis=1, keepdims=True)

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
        warm = self.warm_start and hasattr(self, "hypers_")
        if warm:
            if X.shape[1] != self.n_features_in_ or Y.shape[1] != self.n_outputs_:
                raise ValueError("warm start with data of a different shape")
        else:
            seed = rng.randint(np.iinfo(np.int32).max)
            self.pseudo_inputs_ = select_pseudo_inputs(X, self.n_pseudo_inputs, seed=seed)
            self.hypers_ = self._initial_hypers(X, ws[:, None] * Ys)
            self.beta_ = self.temperature
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        self.support_ = support
        inits = []
        if warm and hasattr(self, "posterior_") and Xs.shape[0] > 0:
            inits.append(self._previous_resp(Xs, Ys))

        self.posterior_, self.hypers_, self.elbo_trace_, self.n_iter_ = self._em(Xs, Ys, ws, self.hypers_, rng, inits)
        self.elbo_ = self.elbo_trace_[-1] if self.elbo_trace_ else 0.0
        return self

    def _previous_resp(self, Xs, Ys):
        """Assignments implied by the previous fit: which component explains each action best."""
        mean, var = predict(Xs, self.pseudo_inputs_, self.posterior_, self.hypers_)
        ll = -0.5 * np.sum((Ys[:, None, :] - mean) ** 2, axis=2) / var - 0.5 * Ys.shape[1] * np.log(var)
        resp = np.exp(ll - logsumexp(ll, axis=1, keepdims=True))
        # keep every component reachable
        resp = resp + 1e-3
        return resp / resp.sum(axis=1, keepdims=True)

    def _em(self, Xs, Ys, ws, hypers, rng, inits=()):
        prior = uniform_prior(Xs.shape[0], self.n_components)
        conds = conditionals(hypers, Xs, self.pseudo_inputs_)
        if Xs.shape[0] == 0:
            return update_qf(ws, Ys, conds, prior, hypers, prior), hypers, [], 0
        # screen assignment initializations by the bound after one E-step
        n_init = 1 if self.n_components == 1 else max(1, int(self.n_init))
        candidates = list(inits) if self.n_components > 1 else []
        candidates += [self._init_resp(Xs.shape[0], rng) for _ in range(n_init)]
        best = None
        for resp0 in candidates:
            trace = []
            post = update_qf(ws, Ys, conds, resp0, hypers, prior)
            post, value = self._estep(ws, Ys, conds, post, hypers, trace)
            if best is None or value > best[2]:
                best = (post, trace, value)
        post, trace, value = best
        n_round = 1
        while self.optimize_hypers and n_round < self.max_em_rounds:
            hypers = mstep(
                ws, Ys, self.pseudo_inputs_, Xs, post.resp, hypers, prior, max_iter=self.mstep_max_iter
            )
            conds = conditionals(hypers, Xs, self.pseudo_inputs_)
            post = update_qf(ws, Ys, conds, post.resp, hypers, prior)
            trace.append(elbo(ws, Ys, conds, post, hypers))
            prev = value
            post, value = self._estep(ws, Ys, conds, post, hypers, trace)
            n_round += 1
            if abs(value - prev) <= self.em_tol * max(1.0, abs(prev)):
                break
        return post, hypers, trace, n_round

    def _estep(self, w, Y, conds, post, hypers, trace):
        prev = None
        value = None
        for _ in range(self.max_sweeps):
            post = update_qf(w, Y, conds, post.resp, hypers, post.prior)
            trace.append(elbo(w, Y, conds, post, hypers))
            post = post.with_resp(update_qz(w, Y, conds, post, hypers))
            value = elbo(w, Y, conds, post, hypers)
            trace.append(value)
            if prev is not None and abs(value - prev) <= self.sweep_tol * max(1.0, abs(prev)):
                break
            prev = value
        # leave q(f) consistent with the final assignments
        post = update_qf(w, Y, conds, post.resp, hypers, post.prior)
        value = elbo(w, Y, conds, post, hypers)
        trace.append(value)
        return post, value

    def _check_X(self, X):
        check_is_fitted(self, "posterior_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} state features, got {X.shape[1]}")
        return X

    def predict_components(self, X):
        """Per-component predictive means (n, M, A) and variances (n, M)."""
        X = self._check_X(X)
        return predict(X, self.pseudo_inputs_, self.posterior_, self.hypers_)

    def _temperature(self, variances):
        if getattr(self, "beta_", None) is None:
            self.beta_ = default_temperature(variances)
        return self.beta_

    def predict_proba(self, X):
        """Component-selection probabilities p(m | s), shape (n, M)."""
        _, var = self.predict_components(X)
        return component_probabilities(var, self._temperature(var))

    def predict(self, X):
        """Greedy action: mean of the lowest-variance (most probable) component."""
        mean, var = self.predict_components(X)
        best = np.argmin(var, axis=1)
        out = mean[np.arange(mean.shape[0]), best]
        return out[:, 0] if self._y_1d else out

    def sample(self, X, random_state=None):
        """Draw actions: pick a component from p(m | s), then sample its predictive.

        One component is drawn per state and shared across action dimensions.
        """
        rng = check_random_state(random_state)
        mean, var = self.predict_components(X)
        probs = component_probabilities(var, self._temperature(var))
        n = mean.shape[0]
        u = rng.random_sample(n)
        comp = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), probs.shape[1] - 1)
        mu = mean[np.arange(n), comp]
        sd = np.sqrt(var[np.arange(n), comp])
        out = mu + sd[:, None] * rng.standard_normal(mu.shape)
        return out[:, 0] if self._y_1d else out

    def to_snapshot(self):
        check_is_fitted(self, "posterior_")
        post = self.posterior_
        return {
            "variant": "multimodal" if self.n_components > 1 else "unimodal",
            "params": self.get_params(),
            "n_features_in": int(self.n_features_in_),
            "n_outputs": int(self.n_outputs_),
            "y_1d": bool(self._y_1d),
            "hypers": self.hypers_.to_dict(),
            "beta": self.beta_,
            "pseudo_inputs": self.pseudo_inputs_.tolist(),
            "kuu_jitter": [
                jitter_cholesky(gram(k, self.pseudo_inputs_), scale=k.signal_var)[1] for k in self.hypers_.kernels
            ],
            "mu": post.mu.tolist(),
            "Sigma": post.Sigma.tolist(),
            "whitened_mean": post.m.tolist(),
            "whitened_cov": post.S.tolist(),
            "responsibilities": post.resp.tolist(),
            "support": self.support_.tolist(),
            "elbo": self.elbo_,
        }

    @classmethod
    def from_snapshot(cls, snap):
        params = dict(snap["params"])
        self = cls(**params)
        self.n_features_in_ = int(snap["n_features_in"])
        self.n_outputs_ = int(snap["n_outputs"])
        self._y_1d = bool(snap["y_1d"])
        self.hypers_ = MultimodalHypers.from_dict(snap["hypers"])
        self.beta_ = snap["beta"]
        self.pseudo_inputs_ = np.asarray(snap["pseudo_inputs"], dtype=float).reshape(-1, self.n_features_in_)
        self.support_ = np.asarray(snap["support"], dtype=int)
        M = self.hypers_.n_components
        L = self.pseudo_inputs_.shape[0]
        chol = np.stack(
            [jitter_cholesky(gram(k, self.pseudo_inputs_), scale=k.signal_var)[0] for k in self.hypers_.kernels]
        )
        resp = np.asarray(snap["responsibilities"], dtype=float).reshape(-1, M)
        self.posterior_ = MultimodalPosterior(
            m=np.asarray(snap["whitened_mean"], dtype=float).reshape(M, L, self.n_outputs_),
            S=np.asarray(snap["whitened_cov"], dtype=float).reshape(M, L, L),
            chol=chol,
            resp=resp,
            prior=uniform_prior(resp.shape[0], M),
        )
        self.elbo_ = snap.get("elbo")
        self.elbo_trace_ = []
        self.n_iter_ = 0
        return self
