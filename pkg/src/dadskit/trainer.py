"""The skill-discovery training loop: collect, fit skill-dynamics, reward, update agent."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import numkit as nk
from .agent import AgentConfig, Critic, Policy, rl_update
from .config import RunConfig
from .envsim import Environment, Transitions, make_env
from .intrinsic import RewardConfig, compute_intrinsic_rewards
from .persistence import atomic_write_text, load_checkpoint, prefixed, save_checkpoint, unprefixed
from .skill_dynamics import SkillDynamics
from .skillspace import SkillSpace

log = logging.getLogger(__name__)

# independent RNG streams derived from the run seed
STREAMS = {"init": 0, "collect": 1, "dynamics": 2, "reward": 3, "agent": 4}


@dataclass
class IterationReport:
    iteration: int
    env_steps: int
    episodes: int
    mean_intrinsic_reward: float
    dynamics_loss_before: float
    dynamics_loss_after: float
    critic_loss: float
    policy_loss: float
    failed: int = 0
    wall_clock: float = 0.0


# wall-clock is excluded so that same-seed runs give byte-identical files
METRIC_COLUMNS = [f.name for f in fields(IterationReport) if f.name != "wall_clock"]


def build_env(cfg: RunConfig) -> Environment:
    return make_env(
        cfg.env.name,
        noise_std=cfg.env.noise_std,
        horizon=cfg.env.horizon,
        dt=cfg.env.dt,
        reset_jitter=cfg.env.reset_jitter,
        xy_prior=cfg.dynamics.xy_prior,
    )


def agent_config(cfg: RunConfig) -> AgentConfig:
    a = cfg.agent
    return AgentConfig(tuple(a.hidden_sizes), a.entropy_coeff, a.discount, a.tau, a.lr, a.updates_per_iter, a.batch_size)


def collect_rollouts(
    policy: Policy,
    env: Environment,
    space: SkillSpace,
    n_samples: int,
    rng: np.random.Generator,
    resample_every: int = 0,
    episode_offset: int = 0,
    deterministic: bool = False,
) -> Transitions:
    """Whole episodes, run in lock-step, until at least ``n_samples`` transitions exist."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    T = env.spec.horizon
    n_ep = -(-n_samples // T)
    s = env.reset(rng, n_ep)
    z = space.sample(rng, n_ep)
    cols = {k: [] for k in ("states", "skills", "actions", "next_states", "step_indices")}
    for t in range(T):
        if resample_every and t > 0 and t % resample_every == 0:
            z = space.sample(rng, n_ep)
        a, _ = policy.act(env.policy_obs(s), z, rng, deterministic=deterministic)
        s_next = env.step(s, a, rng)
        cols["states"].append(s)
        cols["skills"].append(z)
        cols["actions"].append(a)
        cols["next_states"].append(s_next)
        cols["step_indices"].append(np.full(n_ep, t))
        s = s_next
    # episode-major ordering: row = episode * T + t
    stacked = {k: np.stack(v, axis=1).reshape(n_ep * T, -1) for k, v in cols.items()}
    episode_ids = np.repeat(np.arange(n_ep) + episode_offset, T)
    return Transitions(
        stacked["states"],
        stacked["skills"],
        stacked["actions"],
        stacked["next_states"],
        episode_ids,
        stacked["step_indices"][:, 0].astype(np.int64),
    )


def _epoch_batches(n: int, batch: int, steps: int, rng: np.random.Generator):
    """Minibatch indices drawn without replacement, reshuffling each epoch."""
    perm, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + batch > n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos : pos + min(batch, n)]
        pos += batch


class Trainer:
    """Owns every learned object, optimiser and RNG stream of a training run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.env = build_env(cfg)
        self.space = SkillSpace(cfg.skill.kind, cfg.skill.dim)
        self.agent_cfg = agent_config(cfg)
        self.reward_cfg = RewardConfig(cfg.reward.L, cfg.reward.marginalize_discrete, cfg.reward.include_current_skill)
        self.rngs = {name: nk.rng_stream(cfg.seed, sid) for name, sid in STREAMS.items()}
        init = self.rngs["init"]
        spec = self.env.spec
        obs_dim = len(spec.policy_observation_indices)
        self.policy = Policy(obs_dim, self.space.dim, spec.action_dim, self.agent_cfg.hidden_sizes, init)
        self.critic = Critic(obs_dim, spec.action_dim, self.space.dim, self.agent_cfg.hidden_sizes, init)
        self.dynamics = SkillDynamics(
            spec.dynamics_observation_indices, spec.predicted_indices, self.space.dim, cfg.dynamics_hidden, cfg.dynamics.experts, init
        )
        self.policy_opt = nk.Adam(self.policy.params, lr=self.agent_cfg.lr)
        self.critic_opt = nk.Adam(self.critic.params, lr=self.agent_cfg.lr)
        self.dynamics_opt = nk.Adam(self.dynamics.params, lr=cfg.dynamics.lr)
        self.iteration = 0
        self.episodes_seen = 0
        self.env_steps = 0
        self.rollbacks = 0

    # ------------------------------------------------------------ iteration

    def iterate(self) -> IterationReport:
        """One pass of collect -> fit q -> freeze -> reward -> agent updates."""
        t0 = time.perf_counter()
        snapshot = self.state_arrays()
        try:
            report = self._iterate()
        except (FloatingPointError, nk.NaNError) as exc:
            log.warning("iteration %d failed (%s); restoring previous parameters", self.iteration + 1, exc)
            rng_state = {k: g.bit_generator.state for k, g in self.rngs.items()}
            self.load_state_arrays(snapshot)
            # keep the advanced RNG streams so the retry does not replay the same draws
            for k, g in self.rngs.items():
                g.bit_generator.state = rng_state[k]
            self.rollbacks += 1
            self.iteration += 1
            report = IterationReport(self.iteration, self.env_steps, 0, *([float("nan")] * 5), failed=1)
        report.wall_clock = time.perf_counter() - t0
        return report

    def _iterate(self) -> IterationReport:
        cfg = self.cfg
        data = collect_rollouts(
            self.policy,
            self.env,
            self.space,
            cfg.trainer.samples_per_iter,
            self.rngs["collect"],
            cfg.skill.resample_every,
            self.episodes_seen,
        )
        n = len(data)
        n_episodes = len(np.unique(data.episode_ids))

        dyn = self.dynamics
        dyn.fit_normalizers(data.states, data.next_states)
        dyn.freeze()
        loss_before = dyn.mean_nll(data.states, data.skills, data.next_states)
        for idx in _epoch_batches(n, cfg.trainer.dynamics_batch, cfg.trainer.dynamics_steps, self.rngs["dynamics"]):
            dyn.fit_step(data.states[idx], data.skills[idx], data.next_states[idx], self.dynamics_opt)
        loss_after = dyn.mean_nll(data.states, data.skills, data.next_states)

        rewards = compute_intrinsic_rewards(
            dyn, data.states, data.skills, data.next_states, self.space, self.reward_cfg, self.rngs["reward"]
        )
        data.rewards = rewards

        obs = self.env.policy_obs(data.states)
        next_obs = self.env.policy_obs(data.next_states)
        a_cfg = self.agent_cfg
        critic_losses, policy_losses = [], []
        for idx in _epoch_batches(n, a_cfg.batch_size, a_cfg.updates_per_iter, self.rngs["agent"]):
            batch = {
                "obs": obs[idx],
                "actions": data.actions[idx],
                "skills": data.skills[idx],
                "rewards": rewards[idx],
                "next_obs": next_obs[idx],
            }
            out = rl_update(self.policy, self.critic, batch, self.policy_opt, self.critic_opt, a_cfg, self.rngs["agent"])
            critic_losses.append(out["critic_loss"])
            policy_losses.append(out["policy_loss"])

        self.iteration += 1
        self.episodes_seen += n_episodes
        self.env_steps += n
        report = IterationReport(
            iteration=self.iteration,
            env_steps=self.env_steps,
            episodes=n_episodes,
            mean_intrinsic_reward=float(rewards.mean()),
            dynamics_loss_before=loss_before,
            dynamics_loss_after=loss_after,
            critic_loss=float(np.mean(critic_losses)),
            policy_loss=float(np.mean(policy_losses)),
        )
        values = [v for k, v in asdict(report).items() if k != "wall_clock"]
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("non-finite loss in iteration report")
        return report

    # ------------------------------------------------------------ persistence

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        arrays.update(prefixed("policy", {f"p{i}": a for i, a in enumerate(self.policy.net.get_flat())}))
        arrays.update(prefixed("critic", {f"p{i}": a for i, a in enumerate(self.critic.online.get_flat())}))
        arrays.update(prefixed("critic_target", {f"p{i}": a for i, a in enumerate(self.critic.target.get_flat())}))
        arrays.update(prefixed("dynamics", self.dynamics.state_arrays()))
        arrays.update(prefixed("adam_policy", self.policy_opt.state_arrays()))
        arrays.update(prefixed("adam_critic", self.critic_opt.state_arrays()))
        arrays.update(prefixed("adam_dynamics", self.dynamics_opt.state_arrays()))
        return {k: np.array(v, copy=True) for k, v in arrays.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        def plist(prefix, net):
            sub = unprefixed(prefix, arrays)
            net.set_flat([sub[f"p{i}"] for i in range(len(net.params))])

        plist("policy", self.policy.net)
        plist("critic", self.critic.online)
        plist("critic_target", self.critic.target)
        self.dynamics.load_state_arrays(unprefixed("dynamics", arrays))
        self.policy_opt.load_state_arrays(unprefixed("adam_policy", arrays))
        self.critic_opt.load_state_arrays(unprefixed("adam_critic", arrays))
        self.dynamics_opt.load_state_arrays(unprefixed("adam_dynamics", arrays))

    def meta(self) -> dict:
        return {
            "config": self.cfg.to_flat(),
            "iteration": self.iteration,
            "episodes_seen": self.episodes_seen,
            "env_steps": self.env_steps,
            "rollbacks": self.rollbacks,
            "rng": {k: g.bit_generator.state for k, g in self.rngs.items()},
        }

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.state_arrays(), self.meta())

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "Trainer":
        from .config import parse_config

        arrays, meta = load_checkpoint(path)
        cfg = parse_config("".join(f"{k} = {v}\n" for k, v in meta["config"].items()))
        tr = cls(cfg)
        tr.load_state_arrays(arrays)
        tr.iteration = int(meta["iteration"])
        tr.episodes_seen = int(meta["episodes_seen"])
        tr.env_steps = int(meta["env_steps"])
        tr.rollbacks = int(meta.get("rollbacks", 0))
        for k, g in tr.rngs.items():
            g.bit_generator.state = meta["rng"][k]
        return tr


def metrics_csv(reports: list[IterationReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in reports:
        d = asdict(r)
        w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in METRIC_COLUMNS])
    return buf.getvalue()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def train(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    iterations: int | None = None,
    progress=None,
) -> tuple[Trainer, list[IterationReport]]:
    """Run training, writing ``ckpt_XXXXX.ckpt``, ``latest.ckpt`` and ``metrics.csv``.

    With ``resume`` the run continues from a checkpoint until ``iterations`` total
    iterations (default: the configured count) have been completed.
    """
    out = Path(out_dir) if out_dir is not None else cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    tr = Trainer.from_checkpoint(resume) if resume else Trainer(cfg)
    total = cfg.trainer.iterations if iterations is None else iterations
    reports: list[IterationReport] = []
    metrics_path = out / "metrics.csv"
    timing_path = out / "timing.csv"
    prior = ""
    if resume and metrics_path.exists():
        lines = metrics_path.read_text().splitlines(keepends=True)
        prior = "".join(lines[1 : 1 + tr.iteration])

    def write_metrics():
        text = metrics_csv(reports)
        header, body = text.split("\n", 1)
        atomic_write_text(metrics_path, header + "\n" + prior + body)
        atomic_write_text(timing_path, "iteration,wall_clock\n" + "".join(f"{r.iteration},{r.wall_clock:.4f}\n" for r in reports))

    if tr.iteration == 0:
        _save(tr, out)
    every = tr.cfg.trainer.checkpoint_every
    while tr.iteration < total:
        rep = tr.iterate()
        reports.append(rep)
        if progress is not None:
            progress(rep)
        log.info(
            "iter %d reward %.3f dyn %.3f->%.3f",
            rep.iteration,
            rep.mean_intrinsic_reward,
            rep.dynamics_loss_before,
            rep.dynamics_loss_after,
        )
        try:
            if (every and tr.iteration % every == 0) or tr.iteration == total:
                _save(tr, out)
            write_metrics()
        except OSError as exc:
            raise OSError(f"I/O failure at iteration {tr.iteration}: {exc}") from exc
    if not reports:
        write_metrics()
    return tr, reports


def _save(tr: Trainer, out: Path) -> None:
    path = out / f"ckpt_{tr.iteration:05d}.ckpt"
    tr.save(path)
    tr.save(out / "latest.ckpt")
