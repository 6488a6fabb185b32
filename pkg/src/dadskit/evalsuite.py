"""Quantitative analyses: goal navigation, skill variance, orientation maps,
open-loop prediction error and the action-space MBRL baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .envsim import Environment, Transitions, goal_reward
from .planner import EpisodeResult, PlannerConfig, execute_episode, identity_controller, policy_controller
from .skill_dynamics import SkillDynamics
from .skillspace import SkillSpace

log = logging.getLogger(__name__)


@dataclass
class GoalTask:
    goal: np.ndarray
    mode: str = "dense"
    eps: float = 2.0
    horizon: int = 200

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=np.float64)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def reward_fn(self, env: Environment):
        def r(states: np.ndarray) -> np.ndarray:
            return goal_reward(env.positions(states), self.goal, self.mode, self.eps)

        return r


@dataclass
class EvalReport:
    deltas: list = field(default_factory=list)
    reached: list = field(default_factory=list)
    variance_table: np.ndarray | None = None
    orientation: np.ndarray | None = None
    prediction_curve: np.ndarray | None = None

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.deltas))

    @property
    def std_delta(self) -> float:
        return float(np.std(self.deltas))


def goal_set(n: int, box: float, seed: int, min_norm: float = 0.0) -> np.ndarray:
    """Seeded goals uniform in [-box, box]^2, rejecting goals closer than ``min_norm``."""
    rng = nk.rng_stream(seed, 101)
    goals = []
    while len(goals) < n:
        g = rng.uniform(-box, box, size=2)
        if np.linalg.norm(g) >= max(min_norm, 1e-9):
            goals.append(g)
    return np.array(goals)


def delta_metric(positions, goal) -> float:
    """Episode-averaged goal distance normalised by the initial distance ||g||."""
    g = np.asarray(goal, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm <= 0:
        raise ValueError("goal must have non-zero norm")
    u = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    return float(np.linalg.norm(u - g, axis=1).mean() / norm)


def reached_goal(positions, goal, eps: float) -> bool:
    u = np.atleast_2d(positions)
    return bool((np.linalg.norm(u - np.asarray(goal), axis=1) <= eps).any())


# ----------------------------------------------------------------- rollouts


def rollout_positions(controller, env: Environment, skills: np.ndarray, rng: np.random.Generator, horizon: int | None = None) -> np.ndarray:
    """Positions (n, H + 1, 2) of one episode per skill row, run in lock-step."""
    H = env.spec.horizon if horizon is None else horizon
    s = env.reset(rng, len(skills))
    out = [env.positions(s)]
    for _ in range(H):
        s = env.step(s, controller(s, skills), rng)
        out.append(env.positions(s))
    return np.stack(out, axis=1)


def random_controller(rng: np.random.Generator, action_dim: int = 2):
    def control(s, z):
        return rng.uniform(-1.0, 1.0, size=(len(np.atleast_2d(s)), action_dim))

    return control


def skill_variance(controller, env: Environment, skills: np.ndarray, episodes_per_skill: int, rng: np.random.Generator) -> np.ndarray:
    """Per-step position std across episodes / per-step mean position norm, averaged over skills.

    Returns shape (H,), for steps 1..H.  Steps where a skill's mean norm is zero
    are skipped for that skill.
    """
    if episodes_per_skill < 2:
        raise ValueError("need at least 2 episodes per skill")
    skills = np.atleast_2d(skills)
    reps = np.repeat(skills, episodes_per_skill, axis=0)
    pos = rollout_positions(controller, env, reps, rng)[:, 1:]  # (S*E, H, 2)
    pos = pos.reshape(len(skills), episodes_per_skill, -1, 2)
    std = np.sqrt(pos.var(axis=1).sum(axis=-1))  # (S, H)
    norm = np.linalg.norm(pos, axis=-1).mean(axis=1)  # (S, H)
    ratio = np.divide(std, norm, out=np.full_like(std, np.nan), where=norm > 0)
    return np.nanmean(ratio, axis=0)


def orientation_map(controller, env: Environment, space: SkillSpace, per_axis: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Heading (radians) of each grid skill's final displacement and the adjacent-cell
    mean absolute heading difference in degrees.  Undefined headings are NaN."""
    if space.is_discrete or space.dim != 2:
        raise ValueError("orientation maps need a 2-D continuous skill space")
    grid = space.grid(per_axis)
    pos = rollout_positions(controller, env, grid, rng)
    disp = pos[:, -1] - pos[:, 0]
    heading = np.arctan2(disp[:, 1], disp[:, 0])
    heading[np.linalg.norm(disp, axis=1) < 1e-9] = np.nan
    headings = heading.reshape(per_axis, per_axis)
    return headings, heading_smoothness(headings)


def heading_smoothness(headings: np.ndarray) -> float:
    diffs = []
    for a, b in ((headings[1:, :], headings[:-1, :]), (headings[:, 1:], headings[:, :-1])):
        d = np.abs(np.angle(np.exp(1j * (a - b))))
        diffs.append(d[np.isfinite(d)])
    d = np.concatenate(diffs)
    return float(np.degrees(d.mean())) if d.size else float("nan")


def prediction_error_curve(model: SkillDynamics, controller, env: Environment, skills: np.ndarray, horizon: int, rng: np.random.Generator, episodes_per_skill: int = 1) -> np.ndarray:
    """Mean ||predicted - actual position|| / ||actual position|| per step, open-loop from the start state."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    skills = np.repeat(np.atleast_2d(skills), episodes_per_skill, axis=0)
    s = env.reset(rng, len(skills))
    pred = s.copy()
    curve = np.zeros(horizon)
    for h in range(horizon):
        s = env.step(s, controller(s, skills), rng)
        pred = model.predict_next(pred, skills)
        actual = env.positions(s)
        norm = np.linalg.norm(actual, axis=1)
        err = np.linalg.norm(env.positions(pred) - actual, axis=1)
        keep = norm >= 1e-6
        curve[h] = (err[keep] / norm[keep]).mean() if keep.any() else np.nan
    return curve


# ----------------------------------------------------------------- planning


def plan_goals(
    policy,
    model: SkillDynamics,
    env: Environment,
    goals: np.ndarray,
    mode: str,
    cfg: PlannerConfig,
    seed: int,
    eps: float = 2.0,
) -> tuple[EvalReport, list[EpisodeResult]]:
    """Zero-shot latent MPPI on each goal; one seeded RNG stream per goal."""
    report, episodes = EvalReport(), []
    controller = policy_controller(policy, env)
    for i, g in enumerate(goals):
        task = GoalTask(g, mode, eps, cfg.horizon)
        rng = nk.rng_stream(seed, 1000 + i)
        ep = execute_episode(controller, model.predict_next, env, task.reward_fn(env), cfg, rng, model.cond_dim)
        pos = ep.positions(env)
        report.deltas.append(delta_metric(pos, g))
        report.reached.append(reached_goal(pos, g, eps))
        episodes.append(ep)
    return report, episodes


# ----------------------------------------------------------------- baselines


def action_model(env: Environment, hidden_sizes, experts: int, rng) -> SkillDynamics:
    """p(s'|s,a) with the skill-dynamics architecture; velocity-like coordinates are inputs."""
    spec = env.spec
    inputs = tuple(spec.policy_observation_indices)
    return SkillDynamics(inputs, inputs + tuple(spec.global_position_indices), spec.action_dim, hidden_sizes, experts, rng)


def collect_random(env: Environment, n_samples: int, rng: np.random.Generator) -> Transitions:
    T = env.spec.horizon
    n_ep = max(1, -(-n_samples // T))
    s = env.reset(rng, n_ep)
    rows = {k: [] for k in ("s", "a", "sn")}
    for _ in range(T):
        a = rng.uniform(-1.0, 1.0, size=(n_ep, env.spec.action_dim))
        sn = env.step(s, a, rng)
        rows["s"].append(s)
        rows["a"].append(a)
        rows["sn"].append(sn)
        s = sn
    st = {k: np.stack(v, axis=1).reshape(n_ep * T, -1)[:n_samples] for k, v in rows.items()}
    n = len(st["s"])
    return Transitions(st["s"], np.zeros((n, 0)), st["a"], st["sn"], np.repeat(np.arange(n_ep), T)[:n], np.tile(np.arange(T), n_ep)[:n])


def fit_action_model(model: SkillDynamics, data: Transitions, steps: int, batch: int, opt: nk.Adam, rng: np.random.Generator) -> float:
    model.fit_normalizers(data.states, data.next_states)
    model.freeze()
    loss = float("nan")
    n = len(data)
    perm, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + batch > n:
            perm, pos = rng.permutation(n), 0
        idx = perm[pos : pos + min(batch, n)]
        pos += batch
        loss = model.fit_step(data.states[idx], data.actions[idx], data.next_states[idx], opt)
    return loss


def _concat(a: Transitions, b: Transitions) -> Transitions:
    return Transitions(
        *(np.concatenate([getattr(a, k), getattr(b, k)]) for k in ("states", "skills", "actions", "next_states", "episode_ids", "step_indices"))
    )


def run_baseline_mbrl(
    variant: str,
    env: Environment,
    budget: int,
    goals: np.ndarray,
    cfg: PlannerConfig,
    seed: int,
    hidden_sizes=(64, 64),
    experts: int = 4,
    lr: float = 3e-4,
    samples_per_iter: int = 2000,
    steps_per_iter: int = 32,
    batch: int = 128,
) -> tuple[EvalReport, SkillDynamics]:
    """Train p(s'|s,a) on the variant's data within ``budget`` env steps, then plan in action space.

    ``cfg`` is the action-space planner configuration (typically hp=20, hz=1).
    The strong-oracle variant trains and evaluates on ``goals[0]`` only.
    """
    if variant not in ("random", "strong_oracle"):
        raise ValueError(f"unknown baseline variant {variant!r}")
    rng = nk.rng_stream(seed, 200)
    model = action_model(env, hidden_sizes, experts, rng)
    opt = nk.Adam(model.params, lr=lr)
    if budget <= 0:
        model.freeze()  # untrained model with identity normalisers
    elif variant == "random":
        data = collect_random(env, budget, rng)
        steps = steps_per_iter * -(-budget // samples_per_iter)
        fit_action_model(model, data, steps, batch, opt, rng)
    else:
        goals = np.atleast_2d(goals)[:1]
        task = GoalTask(goals[0], "dense", horizon=env.spec.horizon)
        chunk = min(samples_per_iter, budget)
        data = collect_random(env, chunk, rng)
        fit_action_model(model, data, steps_per_iter, batch, opt, rng)
        used = len(data)
        while used < budget:
            new = []
            while used < budget and sum(len(t) for t in new) < samples_per_iter:
                ep_cfg = PlannerConfig(**{**cfg.__dict__, "horizon": min(env.spec.horizon, budget - used)})
                ep = execute_episode(identity_controller, model.predict_next, env, task.reward_fn(env), ep_cfg, rng, env.spec.action_dim)
                h = len(ep.actions)
                new.append(
                    Transitions(ep.states[:-1], np.zeros((h, 0)), ep.actions, ep.states[1:], np.zeros(h, dtype=int), np.arange(h))
                )
                used += h
            for t in new:
                data = _concat(data, t)
            fit_action_model(model, data, steps_per_iter, batch, opt, rng)
    model.freeze()
    report = EvalReport()
    for i, g in enumerate(np.atleast_2d(goals)):
        task = GoalTask(g, "dense", horizon=cfg.horizon)
        ep_rng = nk.rng_stream(seed, 1000 + i)
        ep = execute_episode(identity_controller, model.predict_next, env, task.reward_fn(env), cfg, ep_rng, env.spec.action_dim)
        report.deltas.append(delta_metric(ep.positions(env), g))
        report.reached.append(reached_goal(ep.positions(env), g, 2.0))
    return report, model
