"""Policy-search outer loop: collect, reweight, reuse elites, improve.

:func:`run` alternates on-policy episode collection with a refit of the
sparse-GP policy on the return-weighted batch (fresh episodes plus the
best earlier ones). Everything random flows from ``config.seed``, so a
run is a pure function of its config.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .envs import TableSweepEnv, make_env
from .episodes import Episode, EpisodeBatch, build_weights, elite_reuse
from .kernels import NumericalError
from .modeseeking import ModeSeekingSGPPolicy
from .multimodal import MultimodalSGPPolicy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

VARIANTS = ("unimodal", "multimodal", "modeseeking")
TASKS = ("hand-posture", "table-sweep")
SNAPSHOT_FORMAT = "sgpps-snapshot/1"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    """Everything that determines a training run.

    Exactly one of ``episodes_per_iter`` and ``steps_per_iter`` sets the
    collection budget.
    """

    task: str = "hand-posture"
    variant: str = "multimodal"
    n_components: int = 2
    dof: float = 4.0
    n_pseudo_inputs: int = 20
    episodes_per_iter: int | None = 100
    steps_per_iter: int | None = None
    elite_keep: int = 80
    max_iterations: int = 10
    seed: int = 0
    early_stop: bool = True
    stop_tol: float = 0.01
    em_tol: float = 1e-5
    sweep_tol: float = 1e-6
    max_em_rounds: int = 20
    mstep_max_iter: int = 50
    n_init: int = 8
    kernel: str = "se-iso"
    signal_var: float = 1.0
    noise_var: float | str = "auto"
    n_eval: int = 200
    env: dict = field(default_factory=dict)
    output_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task: unknown task {self.task!r}; expected one of {TASKS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if (self.episodes_per_iter is None) == (self.steps_per_iter is None):
            raise ConfigError("episodes_per_iter/steps_per_iter: set exactly one collection budget")
        for name in ("n_components", "n_pseudo_inputs", "n_eval", "max_em_rounds", "n_init"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name}: must be at least 1, got {getattr(self, name)}")
        for name in ("episodes_per_iter", "steps_per_iter"):
            value = getattr(self, name)
            if value is not None and int(value) < 1:
                raise ConfigError(f"{name}: must be at least 1, got {value}")
        for name in ("elite_keep", "max_iterations", "mstep_max_iter"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name}: must be non-negative, got {getattr(self, name)}")
        for name in ("stop_tol", "em_tol", "sweep_tol", "dof", "signal_var"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.noise_var != "auto" and not float(self.noise_var) > 0:
            raise ConfigError(f"noise_var: must be positive or 'auto', got {self.noise_var}")
        if self.kernel not in ("se-iso", "se-ard"):
            raise ConfigError(f"kernel: unknown kernel {self.kernel!r}")
        try:
            make_env(self.task, **self.env)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"env: {exc}") from None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, text):
        """Parse a config with ``[trainer]``, ``[policy]`` and ``[env]`` sections.

        Keys in ``[trainer]`` and ``[policy]`` map onto the dataclass
        fields; ``[env]`` is passed to the environment constructor.
        """
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        extra = sorted(set(raw) - {"trainer", "policy", "env"})
        if extra:
            raise ConfigError(f"unknown section(s): {', '.join(extra)}")
        flat = {}
        for section in ("trainer", "policy"):
            body = raw.get(section, {})
            if not isinstance(body, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, value in body.items():
                if key in flat:
                    raise ConfigError(f"{section}.{key}: duplicated across sections")
                flat[key] = value
        if "env" in flat:
            raise ConfigError("env: use an [env] section")
        flat["env"] = dict(raw.get("env", {}))
        # an explicit step budget replaces the default episode budget
        if "steps_per_iter" in flat and "episodes_per_iter" not in flat:
            flat["episodes_per_iter"] = None
        try:
            return cls.from_dict(flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class LearningCurve:
    """One record per completed iteration."""

    records: list = field(default_factory=list)

    columns = ("iteration", "mean_return", "std_return", "elbo")

    def append(self, iteration, returns, elbo, wall_ms):
        returns = np.asarray(returns, dtype=float)
        self.records.append(
            {
                "iteration": int(iteration),
                "mean_return": float(returns.mean()),
                "std_return": float(returns.std()),
                "elbo": float(elbo),
                "wall_ms": float(wall_ms),
            }
        )

    def __len__(self):
        return len(self.records)

    @property
    def mean_returns(self):
        return np.array([r["mean_return"] for r in self.records])

    def write_csv(self, fh):
        """Deterministic columns only; wall time goes to :meth:`write_timing`."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.records:
            w.writerow([r["iteration"]] + [repr(r[c]) for c in self.columns[1:]])

    def write_timing(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "wall_ms"))
        for r in self.records:
            w.writerow([r["iteration"], f"{r['wall_ms']:.1f}"])


def make_policy(config, random_state=None):
    """Untrained policy estimator for ``config.variant``."""
    common = dict(
        n_pseudo_inputs=config.n_pseudo_inputs,
        kernel=config.kernel,
        signal_var=config.signal_var,
        noise_var=config.noise_var,
        max_em_rounds=config.max_em_rounds,
        em_tol=config.em_tol,
        sweep_tol=config.sweep_tol,
        mstep_max_iter=config.mstep_max_iter,
        warm_start=True,
        random_state=random_state,
    )
    if config.variant == "modeseeking":
        return ModeSeekingSGPPolicy(dof=config.dof, **common)
    M = 1 if config.variant == "unimodal" else config.n_components
    return MultimodalSGPPolicy(n_components=M, n_init=config.n_init, **common)


def is_fitted(policy):
    try:
        check_is_fitted(policy)
    except NotFittedError:
        return False
    return True


def prior_noise_var(policy):
    """sigma^2 used by a policy that has not seen data yet."""
    nv = policy.noise_var
    return 0.01 * policy.signal_var if nv == "auto" else float(nv)


def act(policy, states, rng, action_dim, mode="sample"):
    """Actions for a batch of states.

    ``mode`` is ``"sample"`` (draw from the predictive), ``"greedy"``
    (mean of the most probable component) or ``"component"`` (draw a
    component from p(m | s), act at its mean). Callables are used as is.
    An untrained estimator acts from the GP prior N(0, sigma_f^2 + sigma^2).
    """
    X = np.atleast_2d(np.asarray(states, dtype=float))
    if callable(policy) and not hasattr(policy, "fit"):
        return np.atleast_2d(np.asarray([policy(x) for x in X], dtype=float)).reshape(X.shape[0], -1)
    if not is_fitted(policy):
        if mode == "sample":
            sd = np.sqrt(policy.signal_var + prior_noise_var(policy))
            return sd * rng.standard_normal((X.shape[0], action_dim))
        return np.zeros((X.shape[0], action_dim))
    if mode == "sample":
        out = policy.sample(X, random_state=rng)
    elif mode == "component" and isinstance(policy, MultimodalSGPPolicy):
        mean, _ = policy.predict_components(X)
        probs = policy.predict_proba(X)
        u = rng.random_sample(X.shape[0])
        comp = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), probs.shape[1] - 1)
        out = mean[np.arange(X.shape[0]), comp]
    elif mode in ("greedy", "component"):
        out = policy.predict(X)
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    return np.asarray(out, dtype=float).reshape(X.shape[0], -1)


def applied_action(env, action):
    if isinstance(env, TableSweepEnv):
        return env.clip_action(action)
    return np.clip(np.asarray(action, dtype=float).reshape(-1), -np.pi, np.pi)


def rollout(env, policy, rng, mode="sample", **reset_kwargs):
    """One episode; returns the :class:`Episode` and the final step's info."""
    state = env.reset(**reset_kwargs)
    states, actions, rewards = [], [], []
    done = False
    info = {}
    while not done:
        a = act(policy, state, rng, env.action_dim, mode=mode)[0]
        a = applied_action(env, a)
        states.append(state)
        actions.append(a)
        state, r, done, info = env.step(a)
        rewards.append(r)
    return Episode(np.array(states), np.array(actions), np.array(rewards)), info


def collect(env, policy, rng, episodes=None, steps=None):
    """On-policy episodes until the budget (episodes or total steps) is met.

    The last episode always runs to completion. Stored actions are the
    ones actually applied (after clipping).
    """
    if (episodes is None) == (steps is None):
        raise ValueError("give exactly one of episodes or steps")
    out = []
    n_steps = 0
    while (episodes is not None and len(out) < episodes) or (steps is not None and n_steps < steps):
        try:
            ep, _ = rollout(env, policy, rng, mode="sample")
        except NumericalError:
            raise
        except Exception as exc:
            raise RuntimeError(f"episode {len(out)} failed: {exc}") from exc
        out.append(ep)
        n_steps += len(ep)
    return out


def improve(policy, batch):
    """Refit ``policy`` on a weighted batch.

    Returns ``(policy, ok)``. A degenerate batch (all returns equal after
    shifting) leaves the policy unchanged; so does a numerical failure,
    which is logged.
    """
    if not isinstance(batch, EpisodeBatch):
        batch = build_weights(batch)
    if batch.n_steps == 0:
        raise ValueError("cannot improve on an empty batch")
    if batch.degenerate:
        logger.info("batch carries no return information; policy unchanged")
        return policy, True
    candidate = copy.deepcopy(policy)
    try:
        candidate.fit(batch.states, batch.actions, sample_weight=batch.weights)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        logger.warning("policy improvement aborted, keeping previous policy: %s", exc)
        return policy, False
    return candidate, True


def _converged(returns, tol):
    """3-iteration moving average of the mean return changed by less than ``tol``."""
    if len(returns) < 6:
        return False
    now = float(np.mean(returns[-3:]))
    before = float(np.mean(returns[-6:-3]))
    return abs(now - before) < tol * max(abs(before), 1e-12)


class NumericalAbort(RuntimeError):
    def __init__(self, iteration, message):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class RunResult:
    curve: LearningCurve
    policy: object
    snapshots: list
    n_failed: int = 0


def snapshot(policy, config, iteration, env):
    """JSON-ready record of a policy (prior policies included)."""
    return {
        "format": SNAPSHOT_FORMAT,
        "task": config.task,
        "variant": config.variant,
        "iteration": int(iteration),
        "state_dim": int(env.state_dim),
        "action_dim": int(env.action_dim),
        "env": dict(config.env),
        "params": policy.get_params(),
        "policy": policy.to_snapshot() if is_fitted(policy) else None,
    }


def load_policy(snap):
    """Estimator from a :func:`snapshot` record."""
    for key in ("format", "variant", "params", "policy", "state_dim", "action_dim"):
        if key not in snap:
            raise ValueError(f"snapshot is missing {key!r}")
    if snap["format"] != SNAPSHOT_FORMAT:
        raise ValueError(f"unsupported snapshot format {snap['format']!r}")
    cls = ModeSeekingSGPPolicy if snap["variant"] == "modeseeking" else MultimodalSGPPolicy
    if snap["policy"] is None:
        return cls(**snap["params"])
    return cls.from_snapshot(snap["policy"])


def run(config, on_iteration=None):
    """Train a policy; returns a :class:`RunResult`.

    ``on_iteration(iteration, snapshot_dict, curve)`` is called after
    every iteration (and once with iteration 0 for the prior policy).
    """
    rng = check_random_state(config.seed)
    env_seed, policy_seed = rng.randint(np.iinfo(np.int32).max, size=2)
    env = make_env(config.task, random_state=int(env_seed), **config.env)
    policy = make_policy(config, random_state=int(policy_seed))
    curve = LearningCurve()
    snaps = [snapshot(policy, config, 0, env)]
    if on_iteration is not None:
        on_iteration(0, snaps[0], curve)
    history = []
    n_failed = 0
    for it in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        try:
            fresh = collect(env, policy, rng, episodes=config.episodes_per_iter, steps=config.steps_per_iter)
        except NumericalError as exc:
            raise NumericalAbort(it, str(exc)) from exc
        batch = elite_reuse(history, fresh, config.elite_keep)
        history.append(fresh)
        policy, ok = improve(policy, batch)
        n_failed += not ok
        elbo = getattr(policy, "elbo_", float("nan"))
        curve.append(it, [ep.ret for ep in fresh], np.nan if elbo is None else elbo, 1e3 * (time.perf_counter() - t0))
        snaps.append(snapshot(policy, config, it, env))
        if on_iteration is not None:
            on_iteration(it, snaps[-1], curve)
        logger.info(
            "iteration %d: mean return %.3f, elbo %.3f", it, curve.records[-1]["mean_return"], curve.records[-1]["elbo"]
        )
        if config.early_stop and _converged(curve.mean_returns, config.stop_tol):
            logger.info("mean return converged after %d iterations", it)
            break
    return RunResult(curve=curve, policy=policy, snapshots=snaps, n_failed=n_failed)


def evaluate(policy, env, n_eval, rng=None, mode="greedy"):
    """Mean return and success rate over ``n_eval`` fresh episodes.

    Greedy by default: the mean of the most probable component.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be at least 1")
    rng = check_random_state(rng)
    returns, successes = [], []
    for _ in range(n_eval):
        ep, info = rollout(env, policy, rng, mode=mode)
        returns.append(ep.ret)
        successes.append(bool(info.get("success")))
    return float(np.mean(returns)), float(np.mean(successes))


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "LearningCurve",
    "NumericalAbort",
    "RunResult",
    "act",
    "collect",
    "evaluate",
    "improve",
    "load_policy",
    "make_policy",
    "rollout",
    "run",
    "snapshot",
]
