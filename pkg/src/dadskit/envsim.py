"""Analytic stochastic 2D environments and goal rewards.

Both environments are vectorised: ``reset`` and ``step`` operate on a batch of
states with shape ``(n, state_dim)`` so that several episodes can be rolled out
in lock-step with a single policy evaluation per time step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class EnvFault(RuntimeError):
    pass


@dataclass
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    noise_std: float
    dt: float
    global_position_indices: tuple[int, ...]
    policy_observation_indices: tuple[int, ...]
    # non-global coordinates fed to (and predicted by) skill-dynamics; the
    # global position deltas are always predicted on top of these
    dynamics_observation_indices: tuple[int, ...]
    reset_jitter: float = 0.01
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        for idx in (self.global_position_indices, self.policy_observation_indices, self.dynamics_observation_indices):
            if any(not 0 <= i < self.state_dim for i in idx):
                raise ValueError(f"index set {idx} outside state of size {self.state_dim}")
        if set(self.policy_observation_indices) & set(self.global_position_indices):
            raise ValueError("policy observations must exclude global coordinates")
        if set(self.dynamics_observation_indices) & set(self.global_position_indices):
            raise ValueError("global coordinates are never inputs to skill-dynamics")

    @property
    def predicted_indices(self) -> tuple[int, ...]:
        return tuple(self.dynamics_observation_indices) + tuple(self.global_position_indices)


class Environment:
    spec: EnvSpec

    def __init__(self):
        self.clip_events = 0

    def policy_obs(self, states: np.ndarray) -> np.ndarray:
        return states[..., list(self.spec.policy_observation_indices)]

    def positions(self, states: np.ndarray) -> np.ndarray:
        return states[..., list(self.spec.global_position_indices)]

    def reset(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        m = 1 if n is None else n
        s = self._reset(rng, m)
        return s[0] if n is None else s

    def step(self, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        single = states.ndim == 1
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if s.shape[1] != self.spec.state_dim or a.shape != (s.shape[0], self.spec.action_dim):
            raise EnvFault(f"bad shapes: state {s.shape}, action {a.shape}")
        if not (np.isfinite(s).all() and np.isfinite(a).all()):
            raise EnvFault("non-finite state or action")
        lo, hi = self.spec.action_low, self.spec.action_high
        out_of_bounds = int(((a < lo) | (a > hi)).any(axis=1).sum())
        if out_of_bounds:
            self.clip_events += out_of_bounds
            log.debug("clipped %d out-of-bound actions", out_of_bounds)
            a = np.clip(a, lo, hi)
        nxt = self._step(s, a, rng)
        return nxt[0] if single else nxt

    def _reset(self, rng, n):  # pragma: no cover - abstract
        raise NotImplementedError

    def _step(self, s, a, rng):  # pragma: no cover - abstract
        raise NotImplementedError


class PointMass2D(Environment):
    """State (x, y, vx, vy); semi-implicit Euler with speed clip and velocity noise."""

    def __init__(self, noise_std: float = 0.05, horizon: int = 200, dt: float = 0.1, reset_jitter: float = 0.01, xy_prior: bool = True):
        super().__init__()
        self.spec = EnvSpec(
            name="pointmass",
            state_dim=4,
            action_dim=2,
            horizon=horizon,
            noise_std=noise_std,
            dt=dt,
            global_position_indices=(0, 1),
            policy_observation_indices=(2, 3),
            dynamics_observation_indices=() if xy_prior else (2, 3),
            reset_jitter=reset_jitter,
        )

    def _reset(self, rng, n):
        s = np.zeros((n, 4))
        if self.spec.reset_jitter > 0:
            s[:, :2] = rng.normal(0.0, self.spec.reset_jitter, size=(n, 2))
        return s

    def _step(self, s, a, rng):
        dt = self.spec.dt
        v = np.clip(s[:, 2:4] + a * dt, -1.0, 1.0)
        x = s[:, 0:2] + v * dt
        if self.spec.noise_std > 0:
            v = v + rng.normal(0.0, self.spec.noise_std, size=v.shape)
        return np.concatenate([x, v], axis=1)


class Unicycle(Environment):
    """State (x, y, heading, speed); actions are (turn rate, acceleration)."""

    def __init__(self, noise_std: float = 0.05, horizon: int = 200, dt: float = 0.1, reset_jitter: float = 0.01, xy_prior: bool = True):
        super().__init__()
        self.spec = EnvSpec(
            name="unicycle",
            state_dim=4,
            action_dim=2,
            horizon=horizon,
            noise_std=noise_std,
            dt=dt,
            global_position_indices=(0, 1),
            policy_observation_indices=(2, 3),
            dynamics_observation_indices=() if xy_prior else (2, 3),
            reset_jitter=reset_jitter,
        )

    def _reset(self, rng, n):
        s = np.zeros((n, 4))
        if self.spec.reset_jitter > 0:
            s[:, 2] = rng.normal(0.0, self.spec.reset_jitter, size=n)
        return s

    def _step(self, s, a, rng):
        dt = self.spec.dt
        theta = s[:, 2] + a[:, 0] * dt
        v = np.clip(s[:, 3] + a[:, 1] * dt, 0.0, 1.0)
        x = s[:, 0] + v * np.cos(theta) * dt
        y = s[:, 1] + v * np.sin(theta) * dt
        if self.spec.noise_std > 0:
            theta = theta + rng.normal(0.0, self.spec.noise_std, size=theta.shape)
        return np.stack([x, y, theta, v], axis=1)


ENVIRONMENTS = {"pointmass": PointMass2D, "unicycle": Unicycle}


def make_env(name: str, **kwargs) -> Environment:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**kwargs)


def goal_reward(u, goal, mode: str = "dense", eps: float = 2.0):
    """Dense ``-||g - u||`` or sparse ``1[||u - g|| <= eps]``; ``u`` may be a batch (..., 2)."""
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(goal, dtype=np.float64)
    if u.shape[-1] != 2 or g.shape != (2,):
        raise ValueError("goal rewards are defined on 2-D positions")
    dist = np.sqrt(((u - g) ** 2).sum(axis=-1))
    if mode == "dense":
        return -dist
    if mode == "sparse":
        return (dist <= eps).astype(np.float64)
    raise ValueError(f"unknown reward mode {mode!r}")


@dataclass
class Transitions:
    """Column-oriented batch of (s, z, a, s') records."""

    states: np.ndarray
    skills: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    episode_ids: np.ndarray
    step_indices: np.ndarray
    rewards: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.states)
        if self.rewards is None:
            self.rewards = np.zeros(n)
        for name in ("skills", "actions", "next_states", "episode_ids", "step_indices", "rewards"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.states)

    def subset(self, idx) -> "Transitions":
        return Transitions(
            self.states[idx],
            self.skills[idx],
            self.actions[idx],
            self.next_states[idx],
            self.episode_ids[idx],
            self.step_indices[idx],
            self.rewards[idx],
        )

    def episode(self, episode_id: int) -> "Transitions":
        rows = np.flatnonzero(self.episode_ids == episode_id)
        return self.subset(rows[np.argsort(self.step_indices[rows], kind="stable")])

    def chains(self) -> bool:
        """True when every episode's next_state[k] equals state[k+1]."""
        for e in np.unique(self.episode_ids):
            ep = self.episode(e)
            if not np.array_equal(ep.next_states[:-1], ep.states[1:]):
                return False
        return True
