"""Mixture-of-experts Gaussian model of state deltas, q(s' | s, z).

The same class serves as the action-conditioned model of the MBRL baselines:
the conditioning vector is then the raw action instead of a skill.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numkit as nk

LOG_2PI = float(np.log(2.0 * np.pi))


class UninitializedModel(RuntimeError):
    pass


class Normalizer:
    """Mean/std statistics with an explicit freeze switch."""

    def __init__(self, dim: int, std_floor: float = 1e-6):
        self.dim = dim
        self.std_floor = std_floor
        self.mean = np.zeros(dim)
        self.std = np.ones(dim)
        self.count = 0
        self.frozen = False

    @property
    def ready(self) -> bool:
        return self.count > 0 or self.frozen or self.dim == 0

    def fit(self, x: np.ndarray) -> None:
        """Replace the statistics with those of ``x`` (fresh-data mode)."""
        if self.frozen:
            raise RuntimeError("normalizer is frozen")
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        self.count = len(x)
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), self.std_floor)

    def update(self, x: np.ndarray) -> None:
        """Merge ``x`` into the running statistics (parallel Welford)."""
        if self.frozen:
            raise RuntimeError("normalizer is frozen")
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        if self.count == 0:
            self.fit(x)
            return
        n_a, n_b = self.count, len(x)
        var_a = self.std**2
        mean_b, var_b = x.mean(axis=0), x.var(axis=0)
        n = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * n_b / n
        m2 = var_a * n_a + var_b * n_b + delta**2 * n_a * n_b / n
        self.std = np.maximum(np.sqrt(m2 / n), self.std_floor)
        self.count = n

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y * self.std + self.mean


class SkillDynamics:
    """q(Δ | s, c) as a mixture of unit-covariance Gaussians in normalised target space.

    Args:
        input_indices: state coordinates fed to the trunk (global positions excluded).
        predicted_indices: state coordinates whose deltas are modelled.
        cond_dim: width of the conditioning vector (skill or action).
    """

    def __init__(
        self,
        input_indices: Sequence[int],
        predicted_indices: Sequence[int],
        cond_dim: int,
        hidden_sizes: Sequence[int] = (64, 64),
        expert_count: int = 4,
        rng: np.random.Generator | None = None,
    ):
        self.input_indices = list(input_indices)
        self.predicted_indices = list(predicted_indices)
        self.cond_dim = cond_dim
        self.expert_count = expert_count
        self.out_dim = len(self.predicted_indices)
        self.hidden_sizes = tuple(hidden_sizes)
        n_in = len(self.input_indices) + cond_dim
        self.net = nk.Mlp([n_in, *hidden_sizes, expert_count * self.out_dim + expert_count], rng)
        self.input_norm = Normalizer(len(self.input_indices))
        self.target_norm = Normalizer(self.out_dim)

    # ----------------------------------------------------------- plumbing

    @property
    def params(self) -> list[nk.Tensor]:
        return self.net.params

    def freeze(self) -> None:
        self.input_norm.frozen = True
        self.target_norm.frozen = True

    def unfreeze(self) -> None:
        self.input_norm.frozen = False
        self.target_norm.frozen = False

    def fit_normalizers(self, states: np.ndarray, next_states: np.ndarray) -> None:
        self.unfreeze()
        if self.input_indices:
            self.input_norm.fit(states[:, self.input_indices])
        self.target_norm.fit(self.deltas(states, next_states))

    def deltas(self, states: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        return next_states[:, self.predicted_indices] - states[:, self.predicted_indices]

    def _require_ready(self) -> None:
        if not (self.input_norm.ready and self.target_norm.ready):
            raise UninitializedModel("skill-dynamics normalizers have not been fitted")

    def _inputs(self, states: np.ndarray, cond: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(states)
        c = np.atleast_2d(cond)
        if c.shape[1] != self.cond_dim:
            raise nk.ShapeError(f"conditioning width {c.shape[1]} != {self.cond_dim}")
        if len(c) != len(s):
            c = np.broadcast_to(c, (len(s), self.cond_dim))
        if not self.input_indices:
            return np.asarray(c, dtype=np.float64)
        return np.concatenate([self.input_norm(s[:, self.input_indices]), c], axis=1)

    def _split(self, out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        e, d = self.expert_count, self.out_dim
        means = out[:, : e * d].reshape(-1, e, d)
        logits = out[:, e * d :]
        logw = logits - logits.max(axis=1, keepdims=True)
        logw = logw - np.log(np.exp(logw).sum(axis=1, keepdims=True))
        return means, logw

    def mixture(self, states: np.ndarray, cond: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expert means (n, E, d) in normalised target space and log gating weights (n, E)."""
        self._require_ready()
        return self._split(self.net.forward(self._inputs(states, cond)))

    @property
    def log_jacobian(self) -> float:
        return -float(np.log(self.target_norm.std).sum())

    # ----------------------------------------------------------- densities

    def log_prob(self, states: np.ndarray, cond: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        """log q(s' | s, c) in raw delta units, one value per row."""
        s, sn = np.atleast_2d(states), np.atleast_2d(next_states)
        means, logw = self.mixture(s, cond)
        y = self.target_norm(self.deltas(s, sn))
        sq = ((y[:, None, :] - means) ** 2).sum(axis=2)
        comp = logw - 0.5 * sq - 0.5 * self.out_dim * LOG_2PI
        m = comp.max(axis=1, keepdims=True)
        lp = (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0] + self.log_jacobian
        if not np.isfinite(lp).all():
            raise FloatingPointError("non-finite skill-dynamics log-probability")
        return lp

    def log_prob_matrix(self, states: np.ndarray, next_states: np.ndarray, conds: np.ndarray, chunk_rows: int = 200_000) -> np.ndarray:
        """log q(s'_n | s_n, c_l) for every transition n and conditioning row l, shape (n, L)."""
        self._require_ready()
        s, sn = np.atleast_2d(states), np.atleast_2d(next_states)
        conds = np.atleast_2d(conds)
        n, n_c = len(s), len(conds)
        y = self.target_norm(self.deltas(s, sn))  # (n, d)
        y2 = (y**2).sum(axis=1)
        const = -0.5 * self.out_dim * LOG_2PI + self.log_jacobian
        out = np.empty((n, n_c))
        if not self.input_indices:
            # trunk output depends on the conditioning alone
            means, logw = self._split(self.net.forward(conds))  # (L, E, d), (L, E)
            m2 = (means**2).sum(axis=2)
            step = max(1, chunk_rows // max(n_c * self.expert_count, 1))
            for lo in range(0, n, step):
                yb = y[lo : lo + step]
                cross = np.einsum("nd,led->nle", yb, means)
                comp = logw[None] - 0.5 * (y2[lo : lo + step, None, None] - 2.0 * cross + m2[None])
                mx = comp.max(axis=2, keepdims=True)
                out[lo : lo + step] = (mx + np.log(np.exp(comp - mx).sum(axis=2, keepdims=True)))[..., 0]
            return out + const
        # split the first layer so the state and conditioning halves are computed once
        w0, b0 = self.net.params[0].data, self.net.params[1].data
        n_in = len(self.input_indices)
        a = self.input_norm(s[:, self.input_indices]) @ w0[:n_in] + b0  # (n, H)
        c = conds @ w0[n_in:]  # (L, H)
        per = max(1, chunk_rows // max(n, 1))
        for lo in range(0, n_c, per):
            cb = c[lo : lo + per]
            k = len(cb)
            pre = (a[:, None, :] + cb[None, :, :]).reshape(n * k, -1)
            means, logw = self._split(self.net.forward_from(pre, 0))
            yy = np.repeat(y, k, axis=0)
            comp = logw - 0.5 * ((yy[:, None, :] - means) ** 2).sum(axis=2)
            mx = comp.max(axis=1, keepdims=True)
            lp = (mx + np.log(np.exp(comp - mx).sum(axis=1, keepdims=True)))[:, 0]
            out[:, lo : lo + k] = lp.reshape(n, k)
        return out + const

    def nll(self, states: np.ndarray, cond: np.ndarray, next_states: np.ndarray) -> nk.Tensor:
        """Differentiable mean negative log-likelihood of a batch."""
        self._require_ready()
        x = self._inputs(states, cond)
        y = self.target_norm(self.deltas(np.atleast_2d(states), np.atleast_2d(next_states)))
        n, e, d = len(x), self.expert_count, self.out_dim
        out = self.net(x)
        means = nk.reshape(nk.take(out, (slice(None), slice(0, e * d))), (n, e, d))
        logw = nk.log_softmax(nk.take(out, (slice(None), slice(e * d, None))), axis=1)
        target = nk.Tensor(np.broadcast_to(y[:, None, :], (n, e, d)))
        sq = nk.sum(nk.square(nk.sub(means, target)), axis=2)
        comp = nk.sub(logw, nk.mul(sq, 0.5))
        lp = nk.logsumexp(comp, axis=1)
        const = -0.5 * d * LOG_2PI + self.log_jacobian
        return nk.neg(nk.add(nk.mean(lp), const))

    def fit_step(self, states, cond, next_states, optimizer: nk.Adam) -> float:
        """One Adam step on the batch NLL; returns the pre-step loss."""
        if len(states) == 0:
            raise ValueError("empty batch")
        loss = self.nll(states, cond, next_states)
        grads = nk.gradient(self.params, loss)
        optimizer.step(grads)
        return float(loss.data)

    def mean_nll(self, states, cond, next_states) -> float:
        return -float(self.log_prob(states, cond, next_states).mean())

    # ----------------------------------------------------------- prediction

    def predict_delta(self, states: np.ndarray, cond: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        means, logw = self.mixture(states, cond)
        if rng is None:
            y = (np.exp(logw)[:, :, None] * means).sum(axis=1)
        else:
            w = np.exp(logw)
            u = rng.random(len(w))[:, None]
            pick = np.minimum((np.cumsum(w, axis=1) < u).sum(axis=1), self.expert_count - 1)
            y = means[np.arange(len(w)), pick] + rng.normal(size=(len(w), self.out_dim))
        return self.target_norm.inverse(y)

    def predict_next(self, states: np.ndarray, cond: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Advance the predicted coordinates by the (expected or sampled) delta."""
        single = np.ndim(states) == 1
        s = np.array(np.atleast_2d(states), dtype=np.float64)
        s[:, self.predicted_indices] += self.predict_delta(s, cond, rng)
        return s[0] if single else s

    # ----------------------------------------------------------- persistence

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"p{i}": a for i, a in enumerate(self.net.get_flat())}
        out.update(
            input_mean=self.input_norm.mean,
            input_std=self.input_norm.std,
            input_count=np.array(self.input_norm.count),
            target_mean=self.target_norm.mean,
            target_std=self.target_norm.std,
            target_count=np.array(self.target_norm.count),
            frozen=np.array(int(self.target_norm.frozen)),
            expert_count=np.array(self.expert_count),
            input_indices=np.array(self.input_indices, dtype=np.int64),
            predicted_indices=np.array(self.predicted_indices, dtype=np.int64),
        )
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if int(arrays["expert_count"]) != self.expert_count or list(arrays["predicted_indices"]) != self.predicted_indices:
            raise ValueError("checkpoint skill-dynamics layout does not match the configured model")
        self.net.set_flat([arrays[f"p{i}"] for i in range(len(self.net.params))])
        self.input_norm.mean = np.array(arrays["input_mean"], dtype=np.float64)
        self.input_norm.std = np.array(arrays["input_std"], dtype=np.float64)
        self.input_norm.count = int(arrays["input_count"])
        self.target_norm.mean = np.array(arrays["target_mean"], dtype=np.float64)
        self.target_norm.std = np.array(arrays["target_std"], dtype=np.float64)
        self.target_norm.count = int(arrays["target_count"])
        frozen = bool(int(arrays["frozen"]))
        self.input_norm.frozen = self.target_norm.frozen = frozen
