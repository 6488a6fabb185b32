"""Latent skill prior: sampling, enumeration and interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnsupportedOperation(TypeError):
    pass


@dataclass(frozen=True)
class SkillSpace:
    kind: str  # "discrete" | "continuous"
    dim: int

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown skill kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("skill dimension must be positive")

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def log_prior_density(self) -> float:
        """log p(z): -log D for one-hot skills, -D log 2 on the (-1, 1)^D box."""
        return -np.log(self.dim) if self.is_discrete else -self.dim * np.log(2.0)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw one skill (shape (D,)) or ``n`` skills (shape (n, D)) from the prior."""
        m = 1 if n is None else n
        if self.is_discrete:
            z = np.eye(self.dim)[rng.integers(self.dim, size=m)]
        else:
            z = rng.uniform(-1.0, 1.0, size=(m, self.dim))
            # uniform() is half-open; keep the open box strictly
            z[z == -1.0] = np.nextafter(-1.0, 0.0)
        return z[0] if n is None else z

    def enumerate(self) -> np.ndarray:
        if not self.is_discrete:
            raise UnsupportedOperation("cannot enumerate a continuous skill space")
        return np.eye(self.dim)

    def contains(self, z: np.ndarray) -> bool:
        z = np.asarray(z)
        if z.shape[-1] != self.dim:
            return False
        if self.is_discrete:
            return bool(np.all((z == 0) | (z == 1)) and np.all(z.sum(axis=-1) == 1))
        return bool(np.all(np.abs(z) < 1.0))

    def grid(self, per_axis: int) -> np.ndarray:
        """Regular grid of interior box points, (per_axis**D, D), row-major."""
        if self.is_discrete:
            raise UnsupportedOperation("grids are defined for continuous spaces only")
        ticks = (np.arange(per_axis) + 0.5) / per_axis * 2.0 - 1.0
        mesh = np.meshgrid(*([ticks] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def interpolate(space: SkillSpace, z1, z2, t: float) -> np.ndarray:
    if space.is_discrete:
        raise UnsupportedOperation("interpolation is undefined for one-hot skills")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    z1, z2 = np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64)
    if t == 0.0:
        return z1.copy()
    if t == 1.0:
        return z2.copy()
    # z1 + t (z2 - z1) is exact when z1 == z2; the clamp keeps rounding inside the segment
    return np.clip(z1 + t * (z2 - z1), np.minimum(z1, z2), np.maximum(z1, z2))


class SkillSchedule:
    """Per-episode skill, optionally resampled every ``resample_every`` steps."""

    def __init__(self, space: SkillSpace, resample_every: int = 0):
        self.space = space
        self.resample_every = resample_every

    def due(self, step: int) -> bool:
        return step == 0 or (self.resample_every > 0 and step % self.resample_every == 0)
