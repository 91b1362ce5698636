"""Episodes, return weighting and elite sample reuse.

An :class:`EpisodeBatch` turns a list of trajectories into the weighted
regression problem the policies are fit on: every time step of episode
``e`` gets weight ``sqrt(R_e / (J_old * E))``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

J_OLD_FLOOR = 1e-6


@dataclass(frozen=True)
class Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        if states.ndim == 1:
            states = states[:, None]
        if actions.ndim == 1:
            actions = actions[:, None]
        if not (states.shape[0] == actions.shape[0] == rewards.shape[0]):
            raise ValueError(
                f"episode arrays disagree on length: {states.shape[0]}, "
                f"{actions.shape[0]}, {rewards.shape[0]}"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self):
        return self.rewards.shape[0]

    @property
    def ret(self):
        """R(d) = sum of rewards."""
        return float(self.rewards.sum())

    def to_dict(self):
        return {
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "return": self.ret,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["states"]), np.array(d["actions"]), np.array(d["rewards"]))


@dataclass(frozen=True)
class EpisodeBatch:
    """Weighted training set built from a list of episodes.

    Attributes
    ----------
    episodes : tuple of Episode
    returns : ndarray (E,)
        Raw returns R(d^e).
    shifted_returns : ndarray (E,)
        Returns shifted so that the smallest is non-negative.
    j_old : float
    episode_weights : ndarray (E,)
    weights : ndarray (N,)
        Per-step weights, the diagonal of W.
    degenerate : bool
        True when every shifted return was zero; the weights are then
        uniform and carry no information.
    """

    episodes: tuple
    returns: np.ndarray
    shifted_returns: np.ndarray
    j_old: float
    episode_weights: np.ndarray
    weights: np.ndarray
    states: np.ndarray = field(repr=False)
    actions: np.ndarray = field(repr=False)
    degenerate: bool = False

    def __len__(self):
        return len(self.episodes)

    @property
    def n_steps(self):
        return self.weights.shape[0]

    @property
    def weighted_actions(self):
        """a_tilde = W a."""
        return self.weights[:, None] * self.actions

    def to_jsonl(self, fh):
        for ep in self.episodes:
            fh.write(json.dumps(ep.to_dict()) + "\n")


def build_weights(episodes, j_old=None):
    """Return-weighted batch from a list of episodes.

    Returns are shifted uniformly so the minimum is non-negative. ``j_old``
    defaults to the empirical mean of the shifted returns; a provided value
    is used as is. Both are floored at 1e-6.
    """
    episodes = tuple(episodes)
    E = len(episodes)
    if E < 1:
        raise ValueError("need at least one episode")
    returns = np.array([ep.ret for ep in episodes])
    shift = max(0.0, -float(returns.min()))
    shifted = returns + shift
    degenerate = not np.any(shifted > 0)
    if degenerate:
        logger.warning("all %d returns are zero after shifting; using uniform weights", E)
        j = J_OLD_FLOOR
        ep_w = np.full(E, np.sqrt(1.0 / E))
    else:
        j = max(float(shifted.mean()) if j_old is None else float(j_old), J_OLD_FLOOR)
        ep_w = np.sqrt(shifted / (j * E))
    lengths = [len(ep) for ep in episodes]
    weights = np.repeat(ep_w, lengths)
    states = np.concatenate([ep.states for ep in episodes], axis=0)
    actions = np.concatenate([ep.actions for ep in episodes], axis=0)
    return EpisodeBatch(
        episodes=episodes,
        returns=returns,
        shifted_returns=shifted,
        j_old=j,
        episode_weights=ep_w,
        weights=weights,
        degenerate=degenerate,
        states=states,
        actions=actions,
    )


def elite_reuse(history, fresh, keep):
    """Fresh episodes plus the ``keep`` best past episodes, reweighted jointly.

    ``history`` is a sequence of earlier batches (or episode lists) in
    chronological order. Past episodes are ranked by raw return; ties go
    to the more recent episode.
    """
    if keep < 0:
        raise ValueError("keep must be non-negative")
    fresh_eps = list(fresh.episodes if isinstance(fresh, EpisodeBatch) else fresh)
    past = []
    for item in history:
        past.extend(item.episodes if isinstance(item, EpisodeBatch) else item)
    # newest first, then a stable sort on return keeps recency as the tie-break
    past = past[::-1]
    order = sorted(range(len(past)), key=lambda i: -past[i].ret)
    elites = [past[i] for i in order[:keep]]
    return build_weights(fresh_eps + elites)


def read_jsonl(fh):
    """Episodes from a JSON-lines log written by :meth:`EpisodeBatch.to_jsonl`."""
    return [Episode.from_dict(json.loads(line)) for line in fh if line.strip()]
