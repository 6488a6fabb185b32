"""Skill-conditioned tanh-Gaussian policy and a soft Q critic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkit as nk

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def _log1m_tanh2(u):
    """log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class Policy:
    def __init__(self, obs_dim: int, skill_dim: int, action_dim: int, hidden_sizes: Sequence[int] = (64, 64), rng=None):
        self.obs_dim, self.skill_dim, self.action_dim = obs_dim, skill_dim, action_dim
        # one output layer holding both heads: columns [:A] mean, [A:] log-std
        self.net = nk.Mlp([obs_dim + skill_dim, *hidden_sizes, 2 * action_dim], rng)

    @property
    def params(self) -> list[nk.Tensor]:
        return self.net.params

    def _inputs(self, obs, z) -> np.ndarray:
        obs, z = np.atleast_2d(obs), np.atleast_2d(z)
        if len(z) != len(obs):
            z = np.broadcast_to(z, (len(obs), self.skill_dim))
        return np.concatenate([obs, z], axis=1)

    def heads(self, obs, z) -> tuple[np.ndarray, np.ndarray]:
        out = self.net.forward(self._inputs(obs, z))
        if not np.isfinite(out).all():
            raise FloatingPointError("non-finite policy output")
        a = self.action_dim
        return out[:, :a], np.clip(out[:, a:], LOG_STD_MIN, LOG_STD_MAX)

    def act(self, obs, z, rng: np.random.Generator | None = None, deterministic: bool = False):
        """Return (action, log_density) for a single observation or a batch."""
        single = np.ndim(obs) == 1
        mu, log_std = self.heads(obs, z)
        if deterministic:
            u = mu
        else:
            if rng is None:
                raise ValueError("stochastic action needs an rng")
            u = mu + np.exp(log_std) * rng.normal(size=mu.shape)
        a = np.tanh(u)
        logp = self.log_density_pre(u, mu, log_std)
        return (a[0], logp[0]) if single else (a, logp)

    @staticmethod
    def log_density_pre(u, mu, log_std) -> np.ndarray:
        """Density of tanh(u) when u ~ N(mu, exp(log_std)^2), per row."""
        eps = (u - mu) / np.exp(log_std)
        return (-0.5 * eps**2 - log_std - 0.5 * LOG_2PI - _log1m_tanh2(u)).sum(axis=1)

    def log_density(self, obs, z, actions) -> np.ndarray:
        mu, log_std = self.heads(obs, z)
        a = np.clip(np.atleast_2d(actions), -1 + 1e-12, 1 - 1e-12)
        return self.log_density_pre(np.arctanh(a), mu, log_std)

    def rsample(self, obs, z, eps: np.ndarray) -> tuple[nk.Tensor, nk.Tensor]:
        """Reparameterised squashed sample and its log-density as graph tensors."""
        out = self.net(self._inputs(obs, z))
        a = self.action_dim
        mu = nk.take(out, (slice(None), slice(0, a)))
        log_std = nk.clip(nk.take(out, (slice(None), slice(a, None))), LOG_STD_MIN, LOG_STD_MAX)
        u = nk.add(mu, nk.mul(nk.exp(log_std), nk.Tensor(eps)))
        action = nk.tanh(u)
        log1m = nk.mul(nk.sub(nk.add(nk.neg(u), float(np.log(2.0))), nk.softplus(nk.mul(u, -2.0))), 2.0)
        per_dim = nk.sub(nk.sub(nk.Tensor(-0.5 * eps**2 - 0.5 * LOG_2PI), log_std), log1m)
        return action, nk.sum(per_dim, axis=1)


class Critic:
    """Online and target Q(s, a, z) networks."""

    def __init__(self, obs_dim: int, action_dim: int, skill_dim: int, hidden_sizes: Sequence[int] = (64, 64), rng=None):
        sizes = [obs_dim + action_dim + skill_dim, *hidden_sizes, 1]
        self.online = nk.Mlp(sizes, rng)
        self.target = nk.Mlp(sizes)
        self.target.copy_from(self.online)

    @property
    def params(self) -> list[nk.Tensor]:
        return self.online.params

    def q(self, obs, actions, z, target: bool = False) -> np.ndarray:
        net = self.target if target else self.online
        return net.forward(np.concatenate([obs, actions, z], axis=1))[:, 0]

    def soft_update(self, tau: float) -> None:
        for t, o in zip(self.target.params, self.online.params):
            t.data = (1.0 - tau) * t.data + tau * o.data


@dataclass
class AgentConfig:
    hidden_sizes: tuple[int, ...] = (64, 64)
    entropy_coeff: float = 0.1
    discount: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    updates_per_iter: int = 128
    batch_size: int = 128


def policy_objective(policy: Policy, critic: Critic, obs, z, eps, beta: float) -> nk.Tensor:
    """Mean of beta * log pi(a~|s,z) - Q(s, a~, z) over the batch (minimised)."""
    action, logp = policy.rsample(obs, z, eps)
    q = critic.online(nk.concat([nk.Tensor(obs), action, nk.Tensor(z)], axis=1))
    q = nk.reshape(q, (len(obs),))
    return nk.mean(nk.sub(nk.mul(logp, beta), q))


def rl_update(policy: Policy, critic: Critic, batch: dict, policy_opt: nk.Adam, critic_opt: nk.Adam, cfg: AgentConfig, rng: np.random.Generator) -> dict:
    """One critic step, one policy step, one soft target update.

    ``batch`` holds arrays ``obs, actions, skills, rewards, next_obs``.
    """
    obs, act, z = batch["obs"], batch["actions"], batch["skills"]
    r, next_obs = batch["rewards"], batch["next_obs"]
    if len(obs) == 0:
        raise ValueError("empty batch")

    next_a, next_logp = policy.act(next_obs, z, rng)
    q_next = critic.q(next_obs, next_a, z, target=True)
    y = r + cfg.discount * (q_next - cfg.entropy_coeff * next_logp)

    q_pred = nk.reshape(critic.online(np.concatenate([obs, act, z], axis=1)), (len(obs),))
    critic_loss = nk.mean(nk.mul(nk.square(nk.sub(q_pred, nk.Tensor(y))), 0.5))
    critic_opt.step(nk.gradient(critic.params, critic_loss))

    eps = rng.normal(size=(len(obs), policy.action_dim))
    pol_loss = policy_objective(policy, critic, obs, z, eps, cfg.entropy_coeff)
    policy_opt.step(nk.gradient(policy.params, pol_loss))
    for p in critic.params:
        p.zero_grad()

    critic.soft_update(cfg.tau)
    return {"critic_loss": float(critic_loss.data), "policy_loss": float(pol_loss.data)}
