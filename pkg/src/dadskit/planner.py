"""MPPI planning over sequences of held latents (skills or raw actions).

The planner only needs a one-step simulator ``step(states, latents) -> states``
and a reward ``reward_fn(states) -> (K,)``.  Latent-space planning passes the
skill-dynamics model; the MBRL baselines pass an action-conditioned model with
``hz = 1`` and an identity controller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .envsim import Environment

log = logging.getLogger(__name__)

Simulator = Callable[[np.ndarray, np.ndarray], np.ndarray]
RewardFn = Callable[[np.ndarray], np.ndarray]
Controller = Callable[[np.ndarray, np.ndarray], np.ndarray]


class PlannerError(RuntimeError):
    pass


@dataclass
class PlannerConfig:
    hp: int = 1
    hz: int = 10
    refine_steps: int = 10
    samples: int = 50
    gamma: float = 10.0
    smooth_beta: float = 0.9
    plan_std: float = 0.3
    clip_latents: bool = True
    execute_mode: str = "mean"
    horizon: int = 200

    def __post_init__(self):
        if min(self.hp, self.hz, self.refine_steps, self.horizon) < 1:
            raise ValueError("hp, hz, refine_steps and horizon must be positive")
        if self.samples < 1:
            raise ValueError("K (samples) must be at least 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class PlanDistribution:
    """Independent Gaussians N(mu_i, std^2 I), i = 1..hp, with a fixed std."""

    means: np.ndarray  # (hp, D)
    std: float = 0.3

    @classmethod
    def zeros(cls, hp: int, dim: int, std: float = 0.3) -> "PlanDistribution":
        return cls(np.zeros((hp, dim)), std)

    @property
    def hp(self) -> int:
        return self.means.shape[0]

    def sample(self, k: int, rng: np.random.Generator, clip: bool = True) -> np.ndarray:
        z = self.means[None] + self.std * rng.normal(size=(k, *self.means.shape))
        if clip:
            # stay strictly inside the prior box
            z = np.clip(z, -1.0 + 1e-6, 1.0 - 1e-6)
        return z

    def shift(self) -> None:
        """Drop the first element; the new terminal mean copies the old terminal mean."""
        self.means = np.concatenate([self.means[1:], self.means[-1:]], axis=0)


def mppi_weights(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """softmax(gamma * r), shifted by the max reward for stability."""
    r = np.asarray(rewards, dtype=np.float64)
    e = np.exp(gamma * (r - r.max()))
    return e / e.sum()


def mppi_update(samples: np.ndarray, rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Reward-weighted mean of plan samples (K, hp, D) -> (hp, D)."""
    w = mppi_weights(rewards, gamma)
    return np.tensordot(w, samples, axes=(0, 0))


def smooth_plan(samples: np.ndarray, beta: float) -> np.ndarray:
    """z'_i = beta z'_{i-1} + (1 - beta) z_i along the plan axis (axis -2)."""
    out = np.array(samples, dtype=np.float64, copy=True)
    for i in range(1, out.shape[-2]):
        out[..., i, :] = beta * out[..., i - 1, :] + (1.0 - beta) * out[..., i, :]
    return out


def simulate(step: Simulator, state: np.ndarray, plans: np.ndarray, hz: int, reward_fn: RewardFn) -> np.ndarray:
    """Total reward over every simulated step for each of the K plans (K, hp, D)."""
    k = plans.shape[0]
    s = np.repeat(np.atleast_2d(state), k, axis=0)
    total = np.zeros(k)
    for i in range(plans.shape[1]):
        z = plans[:, i, :]
        for _ in range(hz):
            s = step(s, z)
            total += reward_fn(s)
    return total


def refine(plan: PlanDistribution, step: Simulator, state: np.ndarray, reward_fn: RewardFn, cfg: PlannerConfig, rng: np.random.Generator) -> tuple[PlanDistribution, float, int]:
    """One MPPI update of ``plan`` in place; returns (plan, best simulated reward, #excluded)."""
    if cfg.samples < 1:
        raise PlannerError("K must be at least 1")
    samples = plan.sample(cfg.samples, rng, cfg.clip_latents)
    if plan.hp > 1:
        samples = smooth_plan(samples, cfg.smooth_beta)
    rewards = simulate(step, state, samples, cfg.hz, reward_fn)
    ok = np.isfinite(rewards)
    excluded = int((~ok).sum())
    if excluded == len(rewards):
        raise PlannerError("every simulated plan produced a non-finite reward")
    if excluded:
        log.warning("excluded %d plans with non-finite reward", excluded)
    plan.means = mppi_update(samples[ok], rewards[ok], cfg.gamma)
    return plan, float(rewards[ok].max()), excluded


@dataclass
class EpisodeResult:
    states: np.ndarray  # (H + 1, state_dim), includes the initial state
    actions: np.ndarray  # (H, action_dim)
    latents: np.ndarray  # (H, D), latent in force at each step
    rewards: np.ndarray  # (H,), real-environment reward after each step
    excluded_plans: int = 0
    best_simulated: list = field(default_factory=list)

    @property
    def achieved_return(self) -> float:
        return float(self.rewards.sum())

    def positions(self, env: Environment) -> np.ndarray:
        """Positions after each executed step, (H, 2)."""
        return env.positions(self.states[1:])


def execute_episode(
    controller: Controller,
    step: Simulator,
    env: Environment,
    reward_fn: RewardFn,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    latent_dim: int,
    state: np.ndarray | None = None,
) -> EpisodeResult:
    """Plan, execute the first latent for ``hz`` real steps, shift, repeat for ``horizon`` steps."""
    s = env.reset(rng) if state is None else np.array(state, dtype=np.float64)
    plan = PlanDistribution.zeros(cfg.hp, latent_dim, cfg.plan_std)
    states, actions, latents, rewards = [s], [], [], []
    excluded, best = 0, []
    done = 0
    while done < cfg.horizon:
        for _ in range(cfg.refine_steps):
            plan, b, ex = refine(plan, step, s, reward_fn, cfg, rng)
            excluded += ex
        best.append(b)
        z = plan.means[0].copy()
        if cfg.execute_mode == "sample":
            z = plan.sample(1, rng, cfg.clip_latents)[0, 0]
        for _ in range(min(cfg.hz, cfg.horizon - done)):
            a = controller(s, z)
            s = env.step(s, a, rng)
            states.append(s)
            actions.append(a)
            latents.append(z)
            rewards.append(float(reward_fn(s[None])[0]))
            done += 1
        plan.shift()
    return EpisodeResult(np.array(states), np.array(actions), np.array(latents), np.array(rewards), excluded, best)


def policy_controller(policy, env: Environment) -> Controller:
    def control(s: np.ndarray, z: np.ndarray) -> np.ndarray:
        a, _ = policy.act(env.policy_obs(s), z, deterministic=True)
        return a

    return control


def identity_controller(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.clip(a, -1.0, 1.0)
