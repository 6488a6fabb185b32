"""Command-line entry point.

    dadskit train          --config run.cfg --seed 7
    dadskit plan           --checkpoint runs/latest.ckpt --goal 5,5 --mode dense
    dadskit eval           --checkpoint runs/latest.ckpt --suite variance
    dadskit export-traces  --checkpoint runs/latest.ckpt --grid 4
    dadskit baseline       --variant random --checkpoint runs/latest.ckpt

Every command prints the resolved configuration before it runs.  Tables are
written as CSV with SVG figures under ``<output_dir>/plots``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import evalsuite as ev
from . import numkit as nk
from . import plotting
from .config import ConfigError, RunConfig, load_config, read_pairs
from .intrinsic import compute_intrinsic_rewards
from .persistence import CheckpointError, atomic_write_text
from .planner import PlannerConfig, policy_controller
from .trainer import Trainer, read_metrics, train

log = logging.getLogger("dadskit")

# seeded RNG streams used by the evaluation commands
EVAL_STREAMS = {"skills": 301, "variance": 302, "orientation": 303, "prediction": 304, "traces": 305, "reward": 306}


# ----------------------------------------------------------------- config


def resolve_config(args) -> tuple[RunConfig, Trainer | None]:
    """Base config (checkpoint snapshot or defaults), then ``--config`` keys, then flags."""
    tr = None
    if getattr(args, "checkpoint", None):
        tr = Trainer.from_checkpoint(args.checkpoint)
        cfg = tr.cfg
        if args.config:
            cfg = cfg.replace(**read_pairs(Path(args.config).read_text()))
    else:
        cfg = load_config(args.config)
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.output_dir is not None:
        flags["output_dir"] = args.output_dir
    return (cfg.replace(**flags) if flags else cfg), tr


def planner_config(cfg: RunConfig, mode: str = "dense") -> PlannerConfig:
    p = cfg.planner
    common = dict(gamma=p.gamma, smooth_beta=p.smooth_beta, plan_std=p.plan_std, clip_latents=p.clip_latents,
                  execute_mode=p.execute_mode, refine_steps=p.refine_steps, horizon=p.horizon)
    if mode == "sparse":
        return PlannerConfig(hp=p.sparse_hp, hz=p.sparse_hz, samples=p.sparse_samples, **common)
    if mode == "baseline":
        return PlannerConfig(hp=p.baseline_hp, hz=p.baseline_hz, samples=p.samples, **common)
    return PlannerConfig(hp=p.hp, hz=p.hz, samples=p.samples, **common)


def _parse_goal(text: str) -> np.ndarray:
    try:
        g = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"goal must be 'x,y', got {text!r}") from None
    if g.shape != (2,):
        raise argparse.ArgumentTypeError(f"goal must be 'x,y', got {text!r}")
    return g


def _goals(args, cfg: RunConfig) -> np.ndarray:
    if args.goal:
        return np.array(args.goal)
    return ev.goal_set(cfg.eval.goals, cfg.eval.goal_box, cfg.seed, cfg.eval.goal_min_norm)


# ----------------------------------------------------------------- tables


def write_csv(path: Path, header: list[str], rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write_text(path, buf.getvalue())
    return path


def trace_header(skill_dim: int, state_dim: int, action_dim: int) -> list[str]:
    """Fixed column order: episode, step, skill, state, action, reward."""
    return (
        ["episode", "step"]
        + [f"z{i}" for i in range(skill_dim)]
        + [f"s{i}" for i in range(state_dim)]
        + [f"a{i}" for i in range(action_dim)]
        + ["reward"]
    )


def trace_rows(episode: int, latents, states, actions, rewards):
    """Row t holds the state before step t, the latent and action applied, and the reward received."""
    for t in range(len(actions)):
        yield [episode, t, *latents[t], *states[t], *actions[t], rewards[t]]


# ----------------------------------------------------------------- commands


def cmd_train(args, cfg: RunConfig, tr) -> int:
    out = cfg.resolved_output_dir()
    if args.iterations is not None:
        cfg = cfg.replace(**{"trainer.iterations": args.iterations})

    def progress(rep):
        print(
            f"iter {rep.iteration:4d}  steps {rep.env_steps:7d}  reward {rep.mean_intrinsic_reward:8.4f}  "
            f"dyn {rep.dynamics_loss_after:8.4f}  critic {rep.critic_loss:8.4f}" + ("  FAILED" if rep.failed else "")
        )

    atomic_write_text(out / "config.cfg", cfg.dumps())
    trainer, _ = train(cfg, out, resume=args.resume, progress=None if args.quiet else progress)
    rows = read_metrics(out / "metrics.csv")
    if rows:
        plotting.plot_metrics(rows, out / "plots" / "metrics.svg")
    print(f"wrote {out / 'latest.ckpt'} after {trainer.iteration} iterations ({trainer.env_steps} env steps)")
    return 0


def cmd_plan(args, cfg: RunConfig, tr: Trainer) -> int:
    out = cfg.resolved_output_dir()
    goals = _goals(args, cfg)
    pc = planner_config(cfg, args.mode)
    eps = cfg.planner.sparse_eps
    report, episodes = ev.plan_goals(tr.policy, tr.dynamics, tr.env, goals, args.mode, pc, cfg.seed, eps)
    spec = tr.env.spec
    rows = []
    for i, ep in enumerate(episodes):
        rows.extend(trace_rows(i, ep.latents, ep.states[:-1], ep.actions, ep.rewards))
        print(f"goal {i}  ({goals[i][0]:+.3f}, {goals[i][1]:+.3f})  delta {report.deltas[i]:.4f}  reached {report.reached[i]}")
    print(f"mean delta {report.mean_delta:.4f}  std {report.std_delta:.4f}  reached {sum(report.reached)}/{len(goals)}")
    write_csv(out / f"plan_{args.mode}.csv", trace_header(tr.space.dim, spec.state_dim, spec.action_dim), rows)
    write_csv(
        out / f"plan_{args.mode}_summary.csv",
        ["goal", "gx", "gy", "delta", "reached"],
        [[i, g[0], g[1], d, int(r)] for i, (g, d, r) in enumerate(zip(goals, report.deltas, report.reached))],
    )
    for i, ep in enumerate(episodes):
        plotting.plot_traces(
            tr.env.positions(ep.states)[None], ep.latents[:1], out / "plots" / f"plan_{args.mode}_{i}.svg",
            title=f"{args.mode} goal {i}", goal=goals[i],
        )
    return 0


def eval_skills(cfg: RunConfig, tr: Trainer) -> np.ndarray:
    return tr.space.sample(nk.rng_stream(cfg.seed, EVAL_STREAMS["skills"]), cfg.eval.variance_skills)


def suite_variance(cfg: RunConfig, tr: Trainer, out: Path) -> dict:
    skills = eval_skills(cfg, tr)
    rng = nk.rng_stream(cfg.seed, EVAL_STREAMS["variance"])
    ctrl = policy_controller(tr.policy, tr.env)
    v_dads = ev.skill_variance(ctrl, tr.env, skills, cfg.eval.episodes_per_skill, rng)
    v_rand = ev.skill_variance(ev.random_controller(rng, tr.env.spec.action_dim), tr.env, skills, cfg.eval.episodes_per_skill, rng)
    write_csv(out / "variance.csv", ["step", "dads", "random"], [[t + 1, a, b] for t, (a, b) in enumerate(zip(v_dads, v_rand))])
    plotting.plot_curves({"dads": v_dads, "random actions": v_rand}, out / "plots" / "variance.svg",
                         "normalized std", "per-skill trajectory variance", logy=True)
    print(f"variance  dads {np.nanmean(v_dads):.4f}  random {np.nanmean(v_rand):.4f}")
    return {"dads": v_dads, "random": v_rand}


def suite_orientation(cfg: RunConfig, tr: Trainer, out: Path) -> dict:
    n = cfg.eval.orientation_grid
    rng = nk.rng_stream(cfg.seed, EVAL_STREAMS["orientation"])
    headings, smooth = ev.orientation_map(policy_controller(tr.policy, tr.env), tr.env, tr.space, n, rng)
    grid = tr.space.grid(n)
    rows = [[i, j, *grid[i * n + j], np.degrees(headings[i, j])] for i in range(n) for j in range(n)]
    write_csv(out / "orientation.csv", ["i", "j", "z1", "z2", "heading_deg"], rows)
    plotting.plot_orientation(headings, out / "plots" / "orientation.svg")
    print(f"orientation  adjacent-cell heading difference {smooth:.2f} deg")
    return {"headings": headings, "smoothness": smooth}


def suite_prediction(cfg: RunConfig, tr: Trainer, out: Path) -> dict:
    skills = eval_skills(cfg, tr)
    rng = nk.rng_stream(cfg.seed, EVAL_STREAMS["prediction"])
    curve = ev.prediction_error_curve(
        tr.dynamics, policy_controller(tr.policy, tr.env), tr.env, skills, cfg.eval.prediction_horizon, rng,
        cfg.eval.episodes_per_skill,
    )
    write_csv(out / "prediction_error.csv", ["step", "error"], [[t + 1, e] for t, e in enumerate(curve)])
    plotting.plot_curves({"skill-dynamics": curve}, out / "plots" / "prediction_error.svg",
                         "normalized position error", "open-loop prediction error", logy=True)
    print(f"prediction  step 1 {curve[0]:.4f}  step {len(curve)} {curve[-1]:.4f}  max {np.nanmax(curve):.4f}")
    return {"curve": curve}


def suite_navigation(cfg: RunConfig, tr: Trainer, out: Path) -> dict:
    goals = ev.goal_set(cfg.eval.goals, cfg.eval.goal_box, cfg.seed, cfg.eval.goal_min_norm)
    res, rows = {}, []
    for mode in ("dense", "sparse"):
        rep, _ = ev.plan_goals(tr.policy, tr.dynamics, tr.env, goals, mode, planner_config(cfg, mode), cfg.seed, cfg.planner.sparse_eps)
        res[mode] = rep
        rows += [[mode, i, g[0], g[1], d, int(r)] for i, (g, d, r) in enumerate(zip(goals, rep.deltas, rep.reached))]
        print(f"navigation {mode:6s}  mean delta {rep.mean_delta:.4f}  reached {sum(rep.reached)}/{len(goals)}")
    write_csv(out / "navigation.csv", ["mode", "goal", "gx", "gy", "delta", "reached"], rows)
    plotting.plot_deltas({m: r.deltas for m, r in res.items()}, out / "plots" / "navigation.svg")
    return res


SUITES = {
    "variance": suite_variance,
    "orientation": suite_orientation,
    "prediction": suite_prediction,
    "navigation": suite_navigation,
}


def cmd_eval(args, cfg: RunConfig, tr: Trainer) -> int:
    out = cfg.resolved_output_dir()
    names = list(SUITES) if args.suite == "all" else [args.suite]
    for name in names:
        SUITES[name](cfg, tr, out)
    return 0


def cmd_export_traces(args, cfg: RunConfig, tr: Trainer) -> int:
    out = cfg.resolved_output_dir()
    env, space = tr.env, tr.space
    skills = space.enumerate() if space.is_discrete else space.grid(args.grid)
    skills = np.repeat(skills, args.episodes, axis=0)
    rng = nk.rng_stream(cfg.seed, EVAL_STREAMS["traces"])
    ctrl = policy_controller(tr.policy, env)
    s = env.reset(rng, len(skills))
    states, actions, nexts = [], [], []
    for _ in range(env.spec.horizon):
        a = ctrl(s, skills)
        sn = env.step(s, a, rng)
        states.append(s)
        actions.append(a)
        nexts.append(sn)
        s = sn
    S, A, N = (np.stack(x, axis=1) for x in (states, actions, nexts))  # (n, H, .)
    n, H = S.shape[:2]
    rcfg = tr.reward_cfg
    r = compute_intrinsic_rewards(
        tr.dynamics, S.reshape(n * H, -1), np.repeat(skills, H, axis=0), N.reshape(n * H, -1), space, rcfg,
        nk.rng_stream(cfg.seed, EVAL_STREAMS["reward"]),
    ).reshape(n, H)
    rows = []
    for e in range(n):
        rows.extend(trace_rows(e, np.repeat(skills[e : e + 1], H, axis=0), S[e], A[e], r[e]))
    path = write_csv(out / "traces.csv", trace_header(space.dim, env.spec.state_dim, env.spec.action_dim), rows)
    pos = np.concatenate([env.positions(S), env.positions(N[:, -1:])], axis=1)
    plotting.plot_traces(pos, skills, out / "plots" / "traces.svg")
    print(f"wrote {n} episodes to {path}")
    return 0


def cmd_baseline(args, cfg: RunConfig, tr: Trainer | None) -> int:
    out = cfg.resolved_output_dir()
    env = tr.env if tr is not None else Trainer(cfg).env
    budget = args.budget if args.budget is not None else cfg.eval.baseline_budget
    if not budget:
        budget = tr.env_steps if tr is not None else cfg.trainer.iterations * cfg.trainer.samples_per_iter
    goals = _goals(args, cfg)
    report, _ = ev.run_baseline_mbrl(
        args.variant, env, budget, goals, planner_config(cfg, "baseline"), cfg.seed, hidden_sizes=cfg.dynamics_hidden,
        experts=cfg.dynamics.experts, lr=cfg.dynamics.lr, samples_per_iter=cfg.trainer.samples_per_iter,
        steps_per_iter=cfg.trainer.dynamics_steps, batch=cfg.trainer.dynamics_batch,
    )
    goals = np.atleast_2d(goals)[: len(report.deltas)]
    write_csv(
        out / f"baseline_{args.variant}.csv",
        ["goal", "gx", "gy", "delta", "reached"],
        [[i, g[0], g[1], d, int(r)] for i, (g, d, r) in enumerate(zip(goals, report.deltas, report.reached))],
    )
    plotting.plot_deltas({args.variant: report.deltas}, out / "plots" / f"baseline_{args.variant}.svg")
    print(f"baseline {args.variant}  budget {budget}  mean delta {report.mean_delta:.4f}  std {report.std_delta:.4f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "export-traces": cmd_export_traces,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dadskit", description="Skill discovery and latent-space planning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, help_, needs_ckpt):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir", help="output directory (relative to $DADSKIT_OUTPUT_ROOT when set)")
        if needs_ckpt is not None:
            p.add_argument("--checkpoint", required=needs_ckpt)
        return p

    p = add("train", "train skills and skill-dynamics", None)
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")

    p = add("plan", "zero-shot goal navigation with latent MPPI", True)
    p.add_argument("--goal", type=_parse_goal, action="append", help="x,y (repeatable); default: the seeded goal set")
    p.add_argument("--mode", choices=("dense", "sparse"), default="dense")

    p = add("eval", "variance, orientation, prediction and navigation analyses", True)
    p.add_argument("--suite", choices=(*SUITES, "all"), default="all")

    p = add("export-traces", "write skill rollouts as CSV and SVG", True)
    p.add_argument("--grid", type=int, default=4, help="skills per axis for continuous spaces")
    p.add_argument("--episodes", type=int, default=1, help="episodes per skill")

    p = add("baseline", "action-space MBRL baselines", False)
    p.add_argument("--variant", choices=("random", "strong_oracle"), default="random")
    p.add_argument("--budget", type=int, help="environment steps (default: match the checkpoint)")
    p.add_argument("--goal", type=_parse_goal, action="append")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, tr = resolve_config(args)
    except ConfigError as exc:
        print(f"dadskit: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError) as exc:
        print(f"dadskit: {exc}", file=sys.stderr)
        return 2
    print("# resolved configuration")
    print(cfg.dumps(), end="")
    if tr is not None:
        tr.cfg = cfg
    try:
        return COMMANDS[args.command](args, cfg, tr)
    except (ConfigError, ValueError) as exc:
        print(f"dadskit: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
