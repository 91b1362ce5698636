"""Independent reference computations used to check the fast code paths.

Nothing here reuses the solvers in :mod:`sgpps.kernels` or
:mod:`sgpps.sparse`. The dense GP oracle re-derives the kernel with plain
broadcasting and uses ``numpy.linalg.solve``. :func:`replay_elbo` sums the
lower bound term by term from the unwhitened posterior stored in a
snapshot, in 30-digit arithmetic (mpmath) so that an ill-conditioned
pseudo-input Gram does not limit the agreement. Both are slow (the replay
very much so) and meant for test-scale data.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

# working precision of the replayed bound
REPLAY_DPS = 30

def _as_rows(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a[:, None]
    return a.reshape(a.shape[0], -1) if a.ndim != 2 else a


def se_kernel(X, Y, signal_var, lengthscales):
    """Squared-exponential kernel by explicit broadcasting."""
    X, Y = _as_rows(X), _as_rows(Y)
    diff = (X[:, None, :] - Y[None, :, :]) / np.asarray(lengthscales, dtype=float)
    return signal_var * np.exp(-0.5 * np.sum(diff**2, axis=-1))


def _kernel_from_dict(d):
    return math.exp(d["log_signal_var"]), np.exp(np.asarray(d["log_lengthscales"], dtype=float))


def dense_posterior(states, actions, weights, signal_var, lengthscales, noise_var):
    """Exact weighted GP regression; returns ``predict(X) -> (mean, var)``.

    Each datum has noise variance ``noise_var / w_n^2``; zero-weight data
    are dropped. The predictive variance includes ``noise_var``.
    """
    S = _as_rows(states)
    a = _as_rows(actions)
    w = np.asarray(weights, dtype=float).reshape(-1)
    keep = w > 0
    S, a, w = S[keep], a[keep], w[keep]
    if S.shape[0] > 500:
        raise ValueError("the dense oracle is meant for at most 500 points")
    K = se_kernel(S, S, signal_var, lengthscales) + np.diag(noise_var / w**2)
    alpha = np.linalg.solve(K, a) if S.shape[0] else np.zeros((0, a.shape[1]))

    def predict(X):
        X = _as_rows(X)
        if S.shape[0] == 0:
            return np.zeros((X.shape[0], a.shape[1])), np.full(X.shape[0], signal_var + noise_var)
        Ks = se_kernel(X, S, signal_var, lengthscales)
        mean = Ks @ alpha
        var = signal_var - np.sum(Ks * np.linalg.solve(K, Ks.T).T, axis=1) + noise_var
        return mean, var

    return predict


def fd_gradient(fun, theta, step=1e-5):
    """Central-difference gradient of ``fun`` at ``theta``.

    Raises
    ------
    ValueError
        If ``fun`` is not finite at a probe point; the message names the
        coordinate.
    """
    theta = np.asarray(theta, dtype=float)
    base = fun(theta)
    if not np.isfinite(base):
        raise ValueError("function is not finite at the base point")
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        hi, lo = fun(theta + e), fun(theta - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"function is not finite when probing coordinate {i}")
        grad[i] = (hi - lo) / (2 * step)
    return grad


def _policy_record(snapshot):
    if "policy" in snapshot and "format" in snapshot:
        snapshot = snapshot["policy"]
        if snapshot is None:
            raise ValueError("snapshot holds an untrained policy")
    for key in ("variant", "hypers", "pseudo_inputs", "kuu_jitter", "mu", "Sigma", "support"):
        if key not in snapshot:
            raise ValueError(f"snapshot is missing {key!r}")
    return snapshot


def _batch_arrays(batch):
    if hasattr(batch, "states"):
        return batch.states, batch.actions, batch.weights
    states, actions, weights = batch
    return states, actions, weights




def _mp_rows(a):
    return [[mpmath.mpf(v) for v in row] for row in _as_rows(a)]


def _projection(Z, S, log_signal_var, log_ells, jitter):
    """K_uu (plus the recorded jitter), its inverse, rows of K_fu K_uu^-1 and lam.

    Exact-rounding inputs, arithmetic at ``REPLAY_DPS`` digits: the dense
    formulas lose about log10(cond K_uu) digits, which double precision
    cannot spare.
    """
    sf2 = mpmath.exp(mpmath.mpf(log_signal_var))
    ells = [mpmath.exp(mpmath.mpf(v)) for v in log_ells]
    if len(ells) == 1:
        ells = ells * len(Z[0])

    def k(x, y):
        return sf2 * mpmath.exp(-mpmath.fsum(((xi - yi) / l) ** 2 for xi, yi, l in zip(x, y, ells)) / 2)

    L = len(Z)
    Kuu = mpmath.matrix(L, L)
    for i in range(L):
        for j in range(L):
            Kuu[i, j] = k(Z[i], Z[j])
        Kuu[i, i] += mpmath.mpf(jitter)
    Kinv = (Kuu**-1).tolist()
    A, lam = [], []
    for s in S:
        kf = [k(z, s) for z in Z]
        row = [mpmath.fdot(Kinv[i], kf) for i in range(L)]
        A.append(row)
        lam.append(max(sf2 - mpmath.fdot(row, kf), mpmath.mpf(0)))
    return Kuu, Kinv, A, lam


def _quad(x, M):
    """x^T M x for a matrix given as a list of rows."""
    return mpmath.fdot(x, [mpmath.fdot(row, x) for row in M])


def _gauss_kl(mu_cols, Sigma, Kuu, Kinv):
    """KL(N(mu_col, Sigma) || N(0, Kuu)) summed over the columns in ``mu_cols``.

    ``Sigma`` and ``Kinv`` are lists of rows, ``Kuu`` an mpmath matrix.
    """
    L = Kuu.rows
    trace = mpmath.fsum(mpmath.fdot(Kinv[i], [Sigma[j][i] for j in range(L)]) for i in range(L))
    logdet = mpmath.log(mpmath.det(Kuu)) - mpmath.log(mpmath.det(mpmath.matrix(Sigma)))
    maha = mpmath.fsum(_quad(mu, Kinv) for mu in mu_cols)
    return (len(mu_cols) * (trace - L + logdet) + maha) / 2


def _replay_multimodal(snap, states, actions, weights):
    hyp = snap["hypers"]
    sigma2 = mpmath.exp(mpmath.mpf(hyp["log_noise_var"]))
    Z = _mp_rows(snap["pseudo_inputs"])
    S = _mp_rows(states)
    y = _mp_rows(actions)
    w = [mpmath.mpf(v) for v in weights]
    resp = np.asarray(snap["responsibilities"], dtype=float)
    M = len(hyp["kernels"])
    two_pi = 2 * mpmath.pi
    total = mpmath.mpf(0)
    for m, kd in enumerate(hyp["kernels"]):
        Kuu, Kinv, A, lam = _projection(Z, S, kd["log_signal_var"], kd["log_lengthscales"], snap["kuu_jitter"][m])
        mu = _mp_rows(snap["mu"][m])
        mu_cols = [[row[d] for row in mu] for d in range(len(mu[0]))]
        Sigma = _mp_rows(snap["Sigma"][m])
        for n in range(len(S)):
            v = lam[n] + sigma2
            spread = w[n] ** 2 * _quad(A[n], Sigma)
            for d, col in enumerate(mu_cols):
                resid = w[n] * (y[n][d] - mpmath.fdot(A[n], col))
                b = -mpmath.log(two_pi * v) / 2 - resid**2 / (2 * v) - spread / (2 * v)
                total += mpmath.mpf(resp[n, m]) * b
        total -= _gauss_kl(mu_cols, Sigma, Kuu, Kinv)
    log_prior = -mpmath.log(M)
    for r in resp.ravel():
        if r > 0:
            total -= mpmath.mpf(r) * (mpmath.log(mpmath.mpf(r)) - log_prior)
    return float(total)


def _gamma_kl(a, b, a0, b0):
    """KL(Gamma(a, b) || Gamma(a0, b0)), shape-rate parametrization."""
    return (
        (a - a0) * mpmath.digamma(a) - mpmath.loggamma(a) + mpmath.loggamma(a0)
        + a0 * (mpmath.log(b) - mpmath.log(b0)) + a * (b0 - b) / b
    )


def _replay_modeseeking(snap, states, actions, weights):
    Z = _mp_rows(snap["pseudo_inputs"])
    S = _mp_rows(states)
    y = _mp_rows(actions)
    w = [mpmath.mpf(v) for v in weights]
    half_log_two_pi = mpmath.log(2 * mpmath.pi) / 2
    total = mpmath.mpf(0)
    for k, hd in enumerate(snap["hypers"]):
        kd = hd["kernel"]
        sigma2 = mpmath.exp(mpmath.mpf(hd["log_noise_var"]))
        nu = mpmath.mpf(hd["dof"])
        Kuu, Kinv, A, lam = _projection(Z, S, kd["log_signal_var"], kd["log_lengthscales"], snap["kuu_jitter"][k])
        mu = [row[0] for row in _mp_rows(snap["mu"][k])]
        Sigma = _mp_rows(snap["Sigma"][k])
        shape = [mpmath.mpf(v) for v in np.ravel(snap["shape"][k])]
        rate = [mpmath.mpf(v) for v in np.ravel(snap["rate"][k])]
        for n in range(len(S)):
            resid2 = (y[n][k] - mpmath.fdot(A[n], mu)) ** 2
            spread = _quad(A[n], Sigma)
            total += (mpmath.digamma(shape[n]) - mpmath.log(rate[n])) / 2 - half_log_two_pi
            total -= shape[n] / rate[n] * w[n] ** 2 * (resid2 + spread + lam[n]) / 2
            total -= _gamma_kl(shape[n], rate[n], nu / 2, nu * sigma2 / 2)
        total -= _gauss_kl([mu], Sigma, Kuu, Kinv)
    return float(total)


def replay_elbo(snapshot, batch):
    """Recompute a fitted policy's lower bound from its snapshot and training batch.

    ``batch`` is an :class:`~sgpps.episodes.EpisodeBatch` or a
    ``(states, actions, weights)`` tuple holding the data the policy was
    fit on; zero-weight rows are dropped as in the fit.
    """
    snap = _policy_record(snapshot)
    states, actions, weights = _batch_arrays(batch)
    states = _as_rows(states)
    actions = _as_rows(actions)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    keep = np.flatnonzero(weights > 0)
    if len(keep) != len(snap["support"]) or np.any(keep != np.asarray(snap["support"], dtype=int)):
        raise ValueError("batch does not match the data the snapshot was fit on")
    states, actions, weights = states[keep], actions[keep], weights[keep]
    if states.shape[0] == 0:
        return 0.0
    with mpmath.workdps(REPLAY_DPS):
        if snap["variant"] == "modeseeking":
            if actions.shape[1] != len(snap["hypers"]):
                raise ValueError("action dimension does not match the snapshot")
            return _replay_modeseeking(snap, states, actions, weights)
        if snap["variant"] in ("multimodal", "unimodal"):
            return _replay_multimodal(snap, states, actions, weights)
    raise ValueError(f"unknown policy variant {snap['variant']!r}")
