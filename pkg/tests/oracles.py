"""Independent reference computations used by the unit and acceptance tests.

Nothing here calls into the code under test for the quantity being checked:
gradients come from central finite differences, densities from explicit loops.
"""

from __future__ import annotations

import math

import numpy as np

from dadskit import numkit as nk

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-6


def central_difference(loss_fn, params: list[nk.Tensor], h: float = FD_STEP) -> list[np.ndarray]:
    """d loss / d p by central differences, perturbing one scalar at a time."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = float(loss_fn().data)
            p.data[idx] = orig - h
            down = float(loss_fn().data)
            p.data[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def gradients_agree(analytic, numeric, rel: float = REL_TOL, floor: float = ABS_FLOOR) -> tuple[bool, float]:
    """Elementwise |a - n| <= max(rel * max(|a|, |n|), floor); returns (ok, worst relative error)."""
    worst, ok = 0.0, True
    for a, n in zip(analytic, numeric):
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        bad = diff > np.maximum(rel * scale, floor)
        ok &= not bad.any()
        r = np.where(scale > 0, diff / np.maximum(scale, 1e-300), 0.0)
        worst = max(worst, float(np.where(scale > floor, r, 0.0).max(initial=0.0)))
    return ok, worst


# losses over a net output y of shape (n, k); each exercises different ops
LOSSES = {
    "half_sq": lambda y: nk.mul(nk.sum(nk.square(y)), 0.5),
    "logsumexp": lambda y: nk.sum(nk.logsumexp(y, axis=1)),
    "log_softmax": lambda y: nk.neg(nk.mean(nk.take(nk.log_softmax(y, axis=1), (slice(None), 0)))),
    "tanh_exp": lambda y: nk.mean(nk.exp(nk.mul(nk.tanh(y), 0.5))),
    "softplus_log": lambda y: nk.sum(nk.log(nk.add(nk.softplus(y), 1.0))),
    "clip_product": lambda y: nk.sum(nk.mul(nk.clip(y, -0.5, 0.5), y)),
    "concat_reshape": lambda y: nk.sum(nk.square(nk.reshape(nk.concat([y, nk.neg(y)], axis=1), (-1,)))),
    "broadcast_centre": lambda y: nk.sum(
        nk.square(nk.sub(y, nk.broadcast_to(nk.reshape(nk.mean(y, axis=0), (1, y.shape[1])), y.shape)))
    ),
    "relu_matmul": lambda y: nk.sum(nk.relu(nk.matmul(y, nk.Tensor(np.linspace(-1, 1, y.shape[1] * 2).reshape(y.shape[1], 2))))),
}


def random_gradcheck_case(seed: int):
    """One randomized (architecture, input, loss) configuration.

    Returns (description, params, loss_fn)."""
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(2, 6)) for _ in range(depth)]
    net = nk.Mlp(sizes, rng)
    # random biases so relu kinks are not aligned with zero inputs
    for p in net.params[1::2]:
        p.data = rng.normal(scale=0.3, size=p.data.shape)
    x = rng.normal(size=(int(rng.integers(1, 5)), sizes[0]))
    name = list(LOSSES)[seed % len(LOSSES)]
    loss = LOSSES[name]

    def loss_fn():
        return loss(net(x))

    return f"{name} sizes={sizes} batch={len(x)}", net.params, loss_fn


def run_gradcheck(n_cases: int = 120, start_seed: int = 0) -> list[tuple[str, bool, float]]:
    results = []
    for seed in range(start_seed, start_seed + n_cases):
        desc, params, loss_fn = random_gradcheck_case(seed)
        analytic = nk.gradient(params, loss_fn())
        numeric = central_difference(loss_fn, params)
        ok, worst = gradients_agree(analytic, numeric)
        results.append((desc, ok, worst))
    return results


def loop_mlp_forward(weights: list[np.ndarray], biases: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Nested-loop affine + ReLU forward pass (ReLU on hidden layers only)."""
    h = [list(map(float, row)) for row in np.atleast_2d(x)]
    for layer, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for row in h:
            new = []
            for j in range(w.shape[1]):
                acc = float(b[j])
                for i in range(w.shape[0]):
                    acc += row[i] * float(w[i, j])
                if layer < len(weights) - 1:
                    acc = acc if acc > 0 else 0.0
                new.append(acc)
            out.append(new)
        h = out
    return np.array(h)


def normal_pdf(x: float, mu: float, sigma: float = 1.0) -> float:
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def brute_force_discrete_reward(q_of, s, s_next, z_index: int, n_skills: int) -> float:
    """log q(s'|s,z) - log( (1/D) sum_i q(s'|s,z_i) ) computed densities-first in a python loop."""
    dens = [math.exp(q_of(s, i, s_next)) for i in range(n_skills)]
    return math.log(dens[z_index]) - math.log(sum(dens) / n_skills)


def naive_reward(q_current: float, q_others: list[float]) -> float:
    """log( q / mean(q_others) ) on raw densities."""
    return math.log(q_current / (sum(q_others) / len(q_others)))


def exact_mi_loops(transition, prior, state_given_skill) -> float:
    """I(s'; z | s) by explicit summation; transition[s, z, s'], prior[z], state_given_skill[z, s]."""
    S, Z, _ = transition.shape
    total = 0.0
    for s in range(S):
        for z in range(Z):
            pz_s = prior[z] * state_given_skill[z, s]
            for sn in range(transition.shape[2]):
                p = transition[s, z, sn]
                if pz_s == 0 or p == 0:
                    continue
                ps = sum(prior[k] * state_given_skill[k, s] for k in range(Z))
                marg = sum(prior[k] * state_given_skill[k, s] * transition[s, k, sn] for k in range(Z)) / ps
                total += pz_s * p * math.log(p / marg)
    return total


def random_tabular_system(rng: np.random.Generator, max_states: int = 6, max_skills: int = 4):
    S = int(rng.integers(1, max_states + 1))
    Z = int(rng.integers(1, max_skills + 1))
    transition = rng.dirichlet(np.ones(S) * 0.5, size=(S, Z))
    prior = rng.dirichlet(np.ones(Z))
    state_given_skill = rng.dirichlet(np.ones(S), size=Z)
    return transition, prior, state_given_skill


def random_q_table(rng: np.random.Generator, S: int, Z: int) -> np.ndarray:
    return rng.dirichlet(np.ones(S) * rng.uniform(0.2, 3.0), size=(S, Z))
