"""Two simulated episodic tasks with multiple optimal actions.

* :class:`HandPostureEnv`: a one-step grasp. The state is the object's
  orientation and the action a wrist angle; a cube can be grasped from
  two sides, so every state has two optimal actions pi apart.
* :class:`TableSweepEnv`: a planar reach on a round table. Up to five
  objects sit on a small ring around the centre and any of them may be
  swept; the effector moves at most 4 cm per axis and step.

Both environments share the interface ``reset() -> state`` and
``step(action) -> (state, reward, done, info)``, and are deterministic
given their seed and the action sequence. Contact is a geometric rule
(effector centre within one object radius), not a physics simulation.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_random_state

__all__ = [
    "wrap",
    "HandPostureEnv",
    "TableSweepEnv",
    "TaskComplete",
    "subtask_router",
    "run_chain",
    "make_env",
]


def wrap(x):
    """Map angles to [-pi, pi)."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    # float rounding can land exactly on +pi
    y = np.where(y >= np.pi, -np.pi, y)
    return float(y) if np.ndim(y) == 0 else y


class HandPostureEnv:
    """One-step grasping task with two optimal wrist angles per state.

    Parameters
    ----------
    tolerance : float, default=0.2
        Angular tolerance delta (radians) of a successful grasp.
    encoding : {"angle", "cossin"}, default="angle"
        State as the raw angle (1-D) or as (cos, sin) (2-D).
    random_state : int, RandomState or None
    """

    action_dim = 1
    horizon = 1
    success_return = 100.0

    def __init__(self, tolerance=0.2, encoding="angle", random_state=None):
        if not tolerance > 0:
            raise ValueError("tolerance must be positive")
        if encoding not in ("angle", "cossin"):
            raise ValueError(f"unknown encoding {encoding!r}")
        self.tolerance = float(tolerance)
        self.encoding = encoding
        self.rng = check_random_state(random_state)
        self.object_angle = None

    @property
    def state_dim(self):
        return 1 if self.encoding == "angle" else 2

    def encode(self, theta):
        if self.encoding == "angle":
            return np.array([theta])
        return np.array([np.cos(theta), np.sin(theta)])

    def reset(self, object_angle=None):
        theta = self.rng.uniform(-np.pi, np.pi) if object_angle is None else object_angle
        self.object_angle = wrap(theta)
        return self.encode(self.object_angle)

    def reward(self, action):
        """100 if the wrist angle is within tolerance of either grasp, else 0."""
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -np.pi, np.pi))
        gap = min(abs(wrap(a - self.object_angle)), abs(wrap(a - self.object_angle + np.pi)))
        return self.success_return if gap <= self.tolerance else 0.0

    def step(self, action):
        if self.object_angle is None:
            raise RuntimeError("call reset() before step()")
        r = self.reward(action)
        return self.encode(self.object_angle), r, True, {"success": r > 0}

    def optimal_actions(self):
        return wrap(self.object_angle), wrap(self.object_angle - np.pi)


class TaskComplete(Exception):
    """Raised by :func:`subtask_router` when no object is left to sweep."""


class TableSweepEnv:
    """Sweep one of up to five objects off a 40 cm table.

    State (22 values): effector position, absolute object positions
    (5 x 2) and object positions relative to the effector (5 x 2). Empty
    and swept slots are zero. An episode ends when an object is swept or
    after ``max_steps`` steps. Every step costs 0.1 and a sweep earns 10,
    so the return is ``10 * swept - 0.1 * T``.

    Parameters
    ----------
    n_objects : int, default=1
    pattern : {"A", "B", "random"}, default="random"
        Object layout: ring angles start at 0 degrees (A) or 32 degrees
        (B); "random" picks one with equal probability at every reset.
    random_state : int, RandomState or None
    """

    max_slots = 5
    state_dim = 22
    action_dim = 2
    sweep_bonus = 10.0
    step_cost = 0.1
    pattern_offsets = {"A": 0.0, "B": 32.0}
    spacing_deg = 72.0

    def __init__(
        self,
        n_objects=1,
        pattern="random",
        random_state=None,
        table_radius=0.20,
        object_radius=0.035,
        ring_radius=0.06,
        max_steps=20,
        step_limit=0.04,
    ):
        if not (isinstance(n_objects, (int, np.integer)) and 1 <= n_objects <= self.max_slots):
            raise ValueError(f"n_objects must be an integer in 1..{self.max_slots}, got {n_objects!r}")
        if pattern not in ("A", "B", "random"):
            raise ValueError(f"unknown pattern {pattern!r}")
        self.n_objects = int(n_objects)
        self.pattern = pattern
        self.rng = check_random_state(random_state)
        self.table_radius = table_radius
        self.object_radius = object_radius
        self.ring_radius = ring_radius
        self.max_steps = max_steps
        self.step_limit = step_limit
        self.effector = np.zeros(2)
        self.objects = np.zeros((0, 2))
        self.swept = np.zeros(0, dtype=bool)
        self.t = 0

    def object_angles(self, pattern):
        base = self.pattern_offsets[pattern]
        return np.deg2rad(base + self.spacing_deg * np.arange(self.n_objects))

    def reset(self, pattern=None):
        pattern = pattern or self.pattern
        if pattern == "random":
            pattern = "A" if self.rng.random_sample() < 0.5 else "B"
        elif pattern not in self.pattern_offsets:
            raise ValueError(f"unknown pattern {pattern!r}")
        self.current_pattern = pattern
        ang = self.object_angles(pattern)
        self.objects = self.ring_radius * np.column_stack([np.cos(ang), np.sin(ang)])
        self.swept = np.zeros(self.n_objects, dtype=bool)
        self.effector = np.zeros(2)
        self.t = 0
        return self.state()

    def next_subtask(self):
        """Return the effector to the centre and restart the step count."""
        self.effector = np.zeros(2)
        self.t = 0
        return self.state()

    def state(self):
        s = np.zeros(self.state_dim)
        s[:2] = self.effector
        for i in range(self.n_objects):
            if not self.swept[i]:
                s[2 + 2 * i : 4 + 2 * i] = self.objects[i]
                s[12 + 2 * i : 14 + 2 * i] = self.objects[i] - self.effector
        return s

    @property
    def n_remaining(self):
        return int(np.count_nonzero(~self.swept))

    def clip_action(self, action):
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape != (2,) or not np.all(np.isfinite(a)):
            raise ValueError(f"expected a finite 2-D displacement, got {action!r}")
        return np.clip(a, -self.step_limit, self.step_limit)

    def step(self, action):
        a = self.clip_action(action)
        pos = self.effector + a
        r = np.hypot(*pos)
        if r > self.table_radius:
            pos = pos * (self.table_radius / r)
        self.effector = pos
        self.t += 1
        dist = np.hypot(*(self.objects - pos).T)
        hit = np.flatnonzero(~self.swept & (dist <= self.object_radius))
        self.swept[hit] = True
        bonus = self.sweep_bonus if hit.size else 0.0
        done = bool(hit.size) or self.t >= self.max_steps
        info = {
            "sweep_bonus": bonus,
            "step_penalty": -self.step_cost,
            "swept": hit.tolist(),
            "applied_action": a,
            "success": bool(hit.size),
        }
        return self.state(), bonus - self.step_cost, done, info


def subtask_router(state):
    """Number of unswept objects in a table-sweep state (selects the policy).

    Raises
    ------
    TaskComplete
        When every object has been swept.
    """
    s = np.asarray(state, dtype=float).reshape(-1)
    if s.shape[0] != TableSweepEnv.state_dim:
        raise ValueError(f"expected a {TableSweepEnv.state_dim}-dimensional state, got {s.shape[0]}")
    slots = s[2:12].reshape(TableSweepEnv.max_slots, 2)
    n = int(np.count_nonzero(np.any(slots != 0, axis=1)))
    if n == 0:
        raise TaskComplete("no objects left")
    return n


def run_chain(env, policies):
    """Clear every object by routing each subtask to its own policy.

    ``policies`` maps the number of remaining objects to a callable
    ``state -> action``. After each sweep the effector returns to the
    centre. Stops when the table is clear or a subtask times out.

    Returns
    -------
    invoked : list of int
        Policy index used for each subtask, in order.
    success : bool
    """
    state = env.reset()
    invoked = []
    while True:
        try:
            idx = subtask_router(state)
        except TaskComplete:
            return invoked, True
        invoked.append(idx)
        done = False
        info = {}
        while not done:
            state, _, done, info = env.step(policies[idx](state))
        if not info.get("success"):
            return invoked, False
        state = env.next_subtask()


def make_env(task, random_state=None, **kwargs):
    """Environment by task id: ``"hand-posture"`` or ``"table-sweep"``."""
    if task == "hand-posture":
        return HandPostureEnv(random_state=random_state, **kwargs)
    if task == "table-sweep":
        return TableSweepEnv(random_state=random_state, **kwargs)
    raise ValueError(f"unknown task {task!r}; expected 'hand-posture' or 'table-sweep'")
