"""Run configuration: flat ``block.key = value`` files resolved onto typed blocks.

Example ``pointmass.cfg``::

    # comments start with '#'
    env.name = pointmass
    skill.kind = continuous
    skill.dim = 2
    trainer.iterations = 100
    agent.hidden_sizes = 128,128
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_type_hints

OUTPUT_ROOT_ENV = "DADSKIT_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class EnvBlock:
    name: str = "pointmass"
    noise_std: float = 0.05
    horizon: int = 200
    dt: float = 0.1
    reset_jitter: float = 0.01

    def validate(self):
        _positive(self, "horizon", "dt")
        _nonneg(self, "noise_std", "reset_jitter")
        if self.name not in ("pointmass", "unicycle"):
            raise ConfigError(f"env.name: unknown environment {self.name!r}")


@dataclass
class SkillBlock:
    kind: str = "continuous"
    dim: int = 2
    resample_every: int = 0

    def validate(self):
        _positive(self, "dim")
        _nonneg(self, "resample_every")
        if self.kind not in ("discrete", "continuous"):
            raise ConfigError(f"skill.kind: expected discrete|continuous, got {self.kind!r}")


@dataclass
class AgentBlock:
    hidden_sizes: tuple = (128, 128)
    entropy_coeff: float = 0.1
    discount: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    updates_per_iter: int = 128
    batch_size: int = 128

    def validate(self):
        _positive(self, "lr", "updates_per_iter", "batch_size")
        _nonneg(self, "entropy_coeff")
        if not 0 <= self.discount < 1:
            raise ConfigError("agent.discount: must lie in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ConfigError("agent.tau: must lie in (0, 1]")
        _sizes(self, "hidden_sizes")


@dataclass
class DynamicsBlock:
    hidden_sizes: tuple = ()  # empty: same capacity as the agent networks
    experts: int = 4
    lr: float = 3e-4
    xy_prior: bool = True

    def validate(self):
        _positive(self, "experts", "lr")
        if self.hidden_sizes:
            _sizes(self, "hidden_sizes")


@dataclass
class TrainerBlock:
    samples_per_iter: int = 2000
    dynamics_steps: int = 32
    dynamics_batch: int = 128
    iterations: int = 250
    checkpoint_every: int = 50

    def validate(self):
        _positive(self, "samples_per_iter", "dynamics_steps", "dynamics_batch")
        _nonneg(self, "iterations", "checkpoint_every")


@dataclass
class RewardBlock:
    L: int = 500
    marginalize_discrete: bool = True
    include_current_skill: bool = False

    def validate(self):
        _positive(self, "L")


@dataclass
class PlannerBlock:
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
    sparse_hp: int = 4
    sparse_hz: int = 25
    sparse_samples: int = 200
    sparse_eps: float = 2.0
    baseline_hp: int = 20
    baseline_hz: int = 1

    def validate(self):
        _positive(self, "hp", "hz", "refine_steps", "samples", "gamma", "plan_std", "horizon")
        _positive(self, "sparse_hp", "sparse_hz", "sparse_samples", "sparse_eps", "baseline_hp", "baseline_hz")
        if not 0 <= self.smooth_beta < 1:
            raise ConfigError("planner.smooth_beta: must lie in [0, 1)")
        if self.execute_mode not in ("mean", "sample"):
            raise ConfigError("planner.execute_mode: expected mean|sample")


@dataclass
class EvalBlock:
    goals: int = 10
    goal_box: float = 8.0
    goal_min_norm: float = 2.0
    episodes_per_skill: int = 10
    variance_skills: int = 8
    orientation_grid: int = 16
    prediction_horizon: int = 50
    baseline_budget: int = 0  # 0: match the DADS training budget

    def validate(self):
        _positive(self, "goals", "goal_box", "episodes_per_skill", "variance_skills", "orientation_grid", "prediction_horizon")
        _nonneg(self, "goal_min_norm", "baseline_budget")
        if self.episodes_per_skill < 2:
            raise ConfigError("eval.episodes_per_skill: need at least 2")
        if self.goal_min_norm >= self.goal_box:
            raise ConfigError("eval.goal_min_norm: must be smaller than eval.goal_box")


BLOCKS = {
    "env": EnvBlock,
    "skill": SkillBlock,
    "agent": AgentBlock,
    "dynamics": DynamicsBlock,
    "trainer": TrainerBlock,
    "reward": RewardBlock,
    "planner": PlannerBlock,
    "eval": EvalBlock,
}


@dataclass
class RunConfig:
    env: EnvBlock = field(default_factory=EnvBlock)
    skill: SkillBlock = field(default_factory=SkillBlock)
    agent: AgentBlock = field(default_factory=AgentBlock)
    dynamics: DynamicsBlock = field(default_factory=DynamicsBlock)
    trainer: TrainerBlock = field(default_factory=TrainerBlock)
    reward: RewardBlock = field(default_factory=RewardBlock)
    planner: PlannerBlock = field(default_factory=PlannerBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    seed: int = 0
    output_dir: str = "runs"

    def validate(self) -> "RunConfig":
        for name in BLOCKS:
            getattr(self, name).validate()
        if self.trainer.samples_per_iter < self.env.horizon:
            raise ConfigError("trainer.samples_per_iter: must be at least env.horizon")
        return self

    @property
    def dynamics_hidden(self) -> tuple:
        return tuple(self.dynamics.hidden_sizes) or tuple(self.agent.hidden_sizes)

    def to_flat(self) -> dict[str, str]:
        out = {}
        for name in BLOCKS:
            for f in fields(getattr(self, name)):
                out[f"{name}.{f.name}"] = _format(getattr(getattr(self, name), f.name))
        out["seed"] = str(self.seed)
        out["output_dir"] = self.output_dir
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())

    def resolved_output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return Path(root) / self.output_dir if root else Path(self.output_dir)

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with flat ``block__key`` or ``block.key`` style overrides applied."""
        new = dataclasses.replace(self, **{n: dataclasses.replace(getattr(self, n)) for n in BLOCKS})
        for key, value in overrides.items():
            _assign(new, key.replace("__", "."), value)
        return new.validate()


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        if typ is tuple:
            return tuple(int(x) for x in raw)
        if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if typ is bool and not isinstance(raw, bool):
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return typ(raw)
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            return tuple(int(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def _assign(cfg: RunConfig, key: str, raw) -> None:
    if key == "seed":
        cfg.seed = _coerce(key, int, raw)
        return
    if key == "output_dir":
        cfg.output_dir = _coerce(key, str, raw)
        return
    block_name, _, attr = key.partition(".")
    if block_name not in BLOCKS or not attr:
        raise ConfigError(f"unknown config key {key!r}")
    block = getattr(cfg, block_name)
    hints = get_type_hints(type(block))
    if attr not in hints:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(block, attr, _coerce(key, hints[attr], raw))


def read_pairs(text: str) -> dict[str, str]:
    """Raw ``key -> value`` pairs of a config file, in file order."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"duplicate config key {key!r}")
        pairs[key] = value
    return pairs


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for key, value in read_pairs(text).items():
        _assign(cfg, key, value)
    return cfg.validate()


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    return parse_config(Path(path).read_text())


def _positive(block, *names):
    for n in names:
        if not getattr(block, n) > 0:
            raise ConfigError(f"{_block_name(block)}.{n}: must be positive")


def _nonneg(block, *names):
    for n in names:
        if getattr(block, n) < 0:
            raise ConfigError(f"{_block_name(block)}.{n}: must be non-negative")


def _sizes(block, name):
    sizes = getattr(block, name)
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError(f"{_block_name(block)}.{name}: need positive layer sizes")


def _block_name(block) -> str:
    for k, v in BLOCKS.items():
        if isinstance(block, v):
            return k
    return type(block).__name__
