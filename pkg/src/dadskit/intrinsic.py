"""Intrinsic reward r_z(s, a, s') and exact tabular mutual-information oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .skillspace import SkillSpace


class RewardFault(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite intrinsic reward at transition {index}")
        self.index = index


@dataclass
class RewardConfig:
    L: int = 500
    marginalize_discrete: bool = True
    include_current_skill: bool = False

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")


def denominator_skills(space: SkillSpace, cfg: RewardConfig, rng: np.random.Generator) -> np.ndarray:
    if space.is_discrete and cfg.marginalize_discrete:
        return space.enumerate()
    return space.sample(rng, cfg.L)


def rewards_from_log_densities(log_q: np.ndarray, log_q_prior: np.ndarray, include_current: bool = False) -> np.ndarray:
    """``log q - logsumexp_i log q_i + log L`` row-wise; ``log_q_prior`` has shape (n, L)."""
    log_q = np.asarray(log_q, dtype=np.float64)
    log_q_prior = np.atleast_2d(log_q_prior)
    if include_current:
        log_q_prior = np.concatenate([log_q[:, None], log_q_prior], axis=1)
    n_den = log_q_prior.shape[1]
    r = log_q - logsumexp(log_q_prior, axis=1) + np.log(n_den)
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise RewardFault(int(bad[0]))
    return r


def compute_intrinsic_rewards(model, states, skills, next_states, space: SkillSpace, cfg: RewardConfig, rng: np.random.Generator) -> np.ndarray:
    """Rewards for a batch of transitions; one prior-skill set is shared by the whole batch."""
    log_q = model.log_prob(states, skills, next_states)
    zs = denominator_skills(space, cfg, rng)
    log_q_prior = model.log_prob_matrix(states, next_states, zs)
    return rewards_from_log_densities(log_q, log_q_prior, cfg.include_current_skill)


# ------------------------------------------------------------------ tabular


@dataclass
class TabularSystem:
    """Finite generative model p(z) p(s|z) p(s'|s,z).

    Attributes:
        transition: array (S, Z, S') with p(s'|s,z).
        prior: array (Z,) with p(z).
        state_given_skill: array (Z, S) with p(s|z).
    """

    transition: np.ndarray
    prior: np.ndarray
    state_given_skill: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.prior = np.asarray(self.prior, dtype=np.float64)
        self.state_given_skill = np.asarray(self.state_given_skill, dtype=np.float64)
        n_s, n_z, n_sn = self.transition.shape
        if n_s != n_sn or self.prior.shape != (n_z,) or self.state_given_skill.shape != (n_z, n_s):
            raise ValueError("inconsistent tabular shapes")
        _check_conditional(self.transition, "transition")
        _check_conditional(self.prior, "prior")
        _check_conditional(self.state_given_skill, "state_given_skill")

    def joint(self) -> np.ndarray:
        """p(s, z, s') with shape (S, Z, S')."""
        p_zs = (self.prior[:, None] * self.state_given_skill).T  # (S, Z)
        return p_zs[:, :, None] * self.transition

    def marginal_next(self) -> np.ndarray:
        """p(s'|s), shape (S, S'); rows for unreachable s are left at zero."""
        p_zs = (self.prior[:, None] * self.state_given_skill).T
        p_s = p_zs.sum(axis=1, keepdims=True)
        p_z_given_s = np.divide(p_zs, p_s, out=np.zeros_like(p_zs), where=p_s > 0)
        return np.einsum("sz,szt->st", p_z_given_s, self.transition)


def _check_conditional(table: np.ndarray, name: str, tol: float = 1e-12) -> None:
    if (table < 0).any() or not np.allclose(table.sum(axis=-1), 1.0, atol=tol, rtol=0):
        raise ValueError(f"{name} table is not normalised over its last axis")


def _expect_log_ratio(joint: np.ndarray, log_num: np.ndarray, log_den: np.ndarray) -> float:
    mask = joint > 0
    return float((joint[mask] * (log_num[mask] - log_den[mask])).sum())


def exact_mi_tabular(sys: TabularSystem) -> float:
    """I(s'; z | s) by explicit summation over the finite support."""
    joint = sys.joint()
    p_next = np.broadcast_to(sys.marginal_next()[:, None, :], joint.shape)
    with np.errstate(divide="ignore"):
        return _expect_log_ratio(joint, np.log(sys.transition), np.log(p_next))


def variational_bound_tabular(sys: TabularSystem, q_table: np.ndarray) -> float:
    """E_p[log q(s'|s,z) - log p(s'|s)], a lower bound on the conditional MI for any normalised q."""
    q_table = np.asarray(q_table, dtype=np.float64)
    if q_table.shape != sys.transition.shape:
        raise ValueError("q_table must have shape (S, Z, S')")
    _check_conditional(q_table, "q_table", tol=1e-9)
    joint = sys.joint()
    p_next = np.broadcast_to(sys.marginal_next()[:, None, :], joint.shape)
    with np.errstate(divide="ignore"):
        return _expect_log_ratio(joint, np.log(q_table), np.log(p_next))
