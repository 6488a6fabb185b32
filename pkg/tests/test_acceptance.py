"""Acceptance criteria 1-8.  Each test prints one PASS/FAIL line with the measured values.

Criteria 5-7 share the desk-scale training runs from ``conftest`` (trained once per session).
"""

import math
import time

import numpy as np
import pytest

from dadskit import evalsuite as ev
from dadskit import numkit as nk
from dadskit.cli import EVAL_STREAMS, eval_skills, planner_config
from dadskit.config import RunConfig
from dadskit.intrinsic import (
    RewardConfig,
    TabularSystem,
    compute_intrinsic_rewards,
    exact_mi_tabular,
    rewards_from_log_densities,
    variational_bound_tabular,
)
from dadskit.persistence import load_checkpoint
from dadskit.planner import mppi_update, mppi_weights, policy_controller
from dadskit.skill_dynamics import SkillDynamics
from dadskit.skillspace import SkillSpace
from dadskit.trainer import train
from conftest import ACCEPTANCE_LINES
from oracles import (
    brute_force_discrete_reward,
    exact_mi_loops,
    naive_reward,
    random_q_table,
    random_tabular_system,
    run_gradcheck,
)

STEP_BUDGET = 500_000
DESK_SECONDS = 30 * 60


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# ----------------------------------------------------------------- 1


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    results = run_gradcheck(120, start_seed=0)
    seconds = time.perf_counter() - t0
    failed = [r for r in results if not r[1]]
    worst = max(r[2] for r in results)
    ok = len(results) >= 100 and not failed and seconds < 60
    report(1, ok, f"{len(results) - len(failed)}/{len(results)} checks at rel 1e-4, worst {worst:.2e}, {seconds:.1f}s")
    assert not failed, failed[:3]
    assert len(results) >= 100 and seconds < 60


# ----------------------------------------------------------------- 2


def _random_discrete_model(D: int, seed: int):
    rng = np.random.default_rng(seed)
    m = SkillDynamics((2, 3), (0, 1), D, (32, 32), 4, rng)
    s = rng.normal(size=(48, 4))
    sn = s + rng.normal(scale=0.3, size=s.shape)
    m.fit_normalizers(s, sn)
    m.freeze()
    return m, s, sn, rng


def test_criterion_2_discrete_reward_oracle():
    t0 = time.perf_counter()
    worst_disc = 0.0
    for seed, D in enumerate((2, 3, 5, 8, 20)):
        m, s, sn, rng = _random_discrete_model(D, seed)
        z_idx = rng.integers(D, size=len(s))
        r = compute_intrinsic_rewards(m, s, np.eye(D)[z_idx], sn, SkillSpace("discrete", D), RewardConfig(), rng)

        def q_of(state, i, nxt):
            return float(m.log_prob(state[None], np.eye(D)[i][None], nxt[None])[0])

        for n in range(len(s)):
            want = brute_force_discrete_reward(q_of, s[n], sn[n], int(z_idx[n]), D)
            worst_disc = max(worst_disc, abs(r[n] - want))
    rng = np.random.default_rng(2)
    worst_naive = 0.0
    for _ in range(500):
        L = int(rng.integers(1, 500))
        q = rng.uniform(0.01, 5.0)
        others = rng.uniform(0.01, 5.0, size=L)
        r = rewards_from_log_densities(np.log([q]), np.log([others]))[0]
        worst_naive = max(worst_naive, abs(r - naive_reward(q, list(others))))
    seconds = time.perf_counter() - t0
    ok = worst_disc <= 1e-9 and worst_naive <= 1e-9 and seconds < 60
    report(2, ok, f"brute-force max err {worst_disc:.1e}, naive-form max err {worst_naive:.1e}, {seconds:.1f}s")
    assert worst_disc <= 1e-9
    assert worst_naive <= 1e-9
    assert seconds < 60


# ----------------------------------------------------------------- 3


def test_criterion_3_mppi_update_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_closed = 0.0
    for _ in range(50):
        k, hp, d = int(rng.integers(1, 40)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        samples = rng.normal(size=(k, hp, d))
        r = rng.normal(scale=2.0, size=k)
        gamma = float(rng.uniform(0.1, 20))
        # closed form written out with python floats
        e = [math.exp(gamma * (x - max(r))) for x in r]
        w = [x / sum(e) for x in e]
        want = sum(wi * samples[i] for i, wi in enumerate(w))
        worst_closed = max(worst_closed, float(np.abs(mppi_update(samples, r, gamma) - want).max()))
        worst_closed = max(worst_closed, float(np.abs(mppi_weights(r, gamma) - w).max()))
    w2 = mppi_weights(np.array([0.0, math.log(3.0)]), 1.0)
    worst_closed = max(worst_closed, abs(w2[0] - 0.25), abs(w2[1] - 0.75))

    samples = rng.normal(size=(50, 4, 2))
    worst_equal = float(np.abs(mppi_update(samples, np.full(50, 1.7), 10.0) - samples.mean(axis=0)).max())

    r = rng.integers(-64, 64, size=50) / 8.0
    base = mppi_update(samples, r, 10.0)
    shift_exact = all(np.array_equal(mppi_update(samples, r + c, 10.0), base) for c in (-1e3, -3.0, 0.5, 17.0, 2.0**20))
    seconds = time.perf_counter() - t0
    ok = worst_closed <= 1e-12 and worst_equal <= 1e-12 and shift_exact and seconds < 1
    report(3, ok, f"closed-form err {worst_closed:.1e}, equal-reward err {worst_equal:.1e}, shift exact {shift_exact}, {seconds:.3f}s")
    assert worst_closed <= 1e-12
    assert worst_equal <= 1e-12
    assert shift_exact
    assert seconds < 1


# ----------------------------------------------------------------- 4


def test_criterion_4_variational_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_gap, worst_eq, worst_oracle = -np.inf, 0.0, 0.0
    for _ in range(50):
        sys = TabularSystem(*random_tabular_system(rng))
        mi = exact_mi_tabular(sys)
        worst_oracle = max(worst_oracle, abs(mi - exact_mi_loops(sys.transition, sys.prior, sys.state_given_skill)))
        S, Z, _ = sys.transition.shape
        for _ in range(100):
            worst_gap = max(worst_gap, variational_bound_tabular(sys, random_q_table(rng, S, Z)) - mi)
        worst_eq = max(worst_eq, abs(variational_bound_tabular(sys, sys.transition) - mi))
    seconds = time.perf_counter() - t0
    ok = worst_gap <= 1e-9 and worst_eq <= 1e-12 and worst_oracle <= 1e-12 and seconds < 60
    report(4, ok, f"max(bound - MI) {worst_gap:.2e}, |bound - MI| at q=p {worst_eq:.1e}, loop-oracle err {worst_oracle:.1e}, {seconds:.1f}s")
    assert worst_gap <= 1e-9
    assert worst_eq <= 1e-12
    assert worst_oracle <= 1e-12
    assert seconds < 60


# ----------------------------------------------------------------- 5


def test_criterion_5_desk_discovery(desk_run):
    tr = desk_run.trainer
    cfg = tr.cfg
    ctrl = policy_controller(tr.policy, tr.env)
    pos = ev.rollout_positions(ctrl, tr.env, tr.space.grid(4), nk.rng_stream(cfg.seed, EVAL_STREAMS["orientation"]))
    final = pos[:, -1] - pos[:, 0]
    quadrants = {(bool(x > 0), bool(y > 0)) for x, y in final if x != 0 and y != 0}
    skills = eval_skills(cfg, tr)
    rng = nk.rng_stream(cfg.seed, EVAL_STREAMS["variance"])
    v_dads = ev.skill_variance(ctrl, tr.env, skills, cfg.eval.episodes_per_skill, rng)
    v_rand = ev.skill_variance(ev.random_controller(rng, tr.env.spec.action_dim), tr.env, skills, cfg.eval.episodes_per_skill, rng)
    ratio = float(np.nanmean(v_rand) / np.nanmean(v_dads))
    ok = len(quadrants) == 4 and ratio >= 2 and tr.env_steps <= STEP_BUDGET and desk_run.seconds <= DESK_SECONDS
    report(
        5, ok,
        f"quadrants {len(quadrants)}/4, variance dads {np.nanmean(v_dads):.4f} vs random {np.nanmean(v_rand):.4f} "
        f"(ratio {ratio:.1f}), {tr.env_steps} env steps, {desk_run.seconds:.0f}s",
    )
    assert len(quadrants) == 4
    assert ratio >= 2
    assert tr.env_steps <= STEP_BUDGET
    assert desk_run.seconds <= DESK_SECONDS


# ----------------------------------------------------------------- 6


def test_criterion_6_zero_shot_planning(desk_run):
    tr = desk_run.trainer
    cfg = tr.cfg
    goals = ev.goal_set(10, cfg.eval.goal_box, cfg.seed, cfg.eval.goal_min_norm)
    dense, _ = ev.plan_goals(tr.policy, tr.dynamics, tr.env, goals, "dense", planner_config(cfg, "dense"), cfg.seed)
    sparse_cfg = planner_config(cfg, "sparse")
    assert (sparse_cfg.hp, sparse_cfg.hz) == (4, 25)
    sparse, _ = ev.plan_goals(tr.policy, tr.dynamics, tr.env, goals, "sparse", sparse_cfg, cfg.seed, cfg.planner.sparse_eps)
    rmbrl, _ = ev.run_baseline_mbrl(
        "random", tr.env, tr.env_steps, goals, planner_config(cfg, "baseline"), cfg.seed,
        hidden_sizes=cfg.dynamics_hidden, experts=cfg.dynamics.experts, lr=cfg.dynamics.lr,
        samples_per_iter=cfg.trainer.samples_per_iter, steps_per_iter=cfg.trainer.dynamics_steps,
        batch=cfg.trainer.dynamics_batch,
    )
    reached = sum(sparse.reached)
    ok_dense = dense.mean_delta <= 0.5
    ok_rmbrl = rmbrl.mean_delta > dense.mean_delta
    ok_sparse = reached >= 5
    report(
        6, ok_dense and ok_rmbrl and ok_sparse,
        f"dense mean delta {dense.mean_delta:.3f} (<= 0.5: {ok_dense}); random-MBRL {rmbrl.mean_delta:.3f} at "
        f"{tr.env_steps} steps (higher: {ok_rmbrl}); sparse reached {reached}/10 (>= 5: {ok_sparse})",
    )
    assert ok_dense, dense.deltas
    assert ok_sparse, sparse.deltas
    assert ok_rmbrl, (dense.mean_delta, rmbrl.mean_delta)


# ----------------------------------------------------------------- 7


def _prediction_curve(run) -> np.ndarray:
    tr = run.trainer
    cfg = tr.cfg
    return ev.prediction_error_curve(
        tr.dynamics, policy_controller(tr.policy, tr.env), tr.env, eval_skills(cfg, tr), 50,
        nk.rng_stream(cfg.seed, EVAL_STREAMS["prediction"]), cfg.eval.episodes_per_skill,
    )


def test_criterion_7_prediction_error_growth(desk_run_state, desk_run):
    curve = _prediction_curve(desk_run_state)
    final, peak = float(curve[-1]), float(np.nanmax(curve))
    ok = np.isfinite(curve).all() and final <= 0.5 and peak <= 2 * 0.5
    xy = _prediction_curve(desk_run)
    report(
        7, ok,
        f"state-conditioned model: step1 {curve[0]:.3f} step50 {final:.3f} max {peak:.3f} (<= 1.0); "
        f"x-y prior model (diagnostic): step1 {xy[0]:.3f} step50 {xy[-1]:.3f} max {np.nanmax(xy):.3f}",
    )
    assert np.isfinite(curve).all()
    assert final <= 0.5
    assert peak <= 2 * 0.5


# ----------------------------------------------------------------- 8


def test_criterion_8_engineering_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = RunConfig().replace(**{"trainer.iterations": 10, "trainer.checkpoint_every": 5})
    a, b, part = tmp_path / "a", tmp_path / "b", tmp_path / "part"
    train(cfg, a)
    train(cfg, b)
    same_metrics = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    train(cfg, part, iterations=5)
    train(cfg, part, resume=part / "ckpt_00005.ckpt")
    x, mx = load_checkpoint(a / "latest.ckpt")
    y, my = load_checkpoint(part / "latest.ckpt")
    same_ckpt = x.keys() == y.keys() and all(np.array_equal(x[k], y[k]) for k in x) and mx == my
    same_resume = (a / "metrics.csv").read_bytes() == (part / "metrics.csv").read_bytes()
    seconds = time.perf_counter() - t0
    ok = same_metrics and same_ckpt and same_resume and seconds < 300
    report(8, ok, f"same-seed metrics identical {same_metrics}, resumed checkpoint identical {same_ckpt}, "
                  f"resumed metrics identical {same_resume}, {seconds:.0f}s")
    assert same_metrics
    assert same_ckpt and same_resume
    assert seconds < 300
