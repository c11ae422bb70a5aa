"""Command-line entry point.

Subcommands: train (policy training + coverage export), sweep (fixed-policy
baseline), evaluate (desired-vs-achieved robustness), metrics (hypervolume and
epsilon report over named CSV sets), rollout (daily trajectory export of one
policy). All randomness flows from --seed through named derived streams, every
run writes a metadata JSON next to its artifacts, and flags can be supplied as
environment variables with the MOBELCOV_ prefix (flags win over env vars, env
vars over the config file).
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import csvio, nn, pareto, pcn
from .baseline import fixed_policy_sweep
from .env import OBJECTIVES_ARH, OBJECTIVES_ARI, EnvConfig, MobelcovEnv
from .parameters import ParameterError, load_default_parameters, load_parameters
from .rng import derive_rng

ENV_PREFIX = "MOBELCOV_"
MODE_ALIASES = {"ode": "deterministic", "binomial": "stochastic"}


class CliError(RuntimeError):
    pass


def _env_default(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper(), fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobelcov",
                                     description="epidemic-control policy experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=_env_default("config"),
                       help="JSON run configuration file")
        p.add_argument("--params", default=_env_default("params"),
                       help="model parameter file (default: packaged synthetic set)")
        p.add_argument("--seed", type=int, default=_env_default("seed"),
                       help="master seed (all streams derive from it)")
        p.add_argument("--mode", choices=sorted(MODE_ALIASES), default=_env_default("mode"),
                       help="transition mode: ode (deterministic) or binomial (stochastic)")
        p.add_argument("--objectives", choices=[OBJECTIVES_ARH, OBJECTIVES_ARI],
                       default=_env_default("objectives"))
        p.add_argument("--out", default=_env_default("out"), help="output directory")

    p_train = sub.add_parser("train", help="train the conditioned policy network")
    common(p_train)
    p_train.add_argument("--steps", type=int, default=_env_default("steps"))
    p_train.add_argument("--arch", choices=sorted(nn.ARCHITECTURES))

    p_sweep = sub.add_parser("sweep", help="fixed-policy baseline sweep")
    common(p_sweep)
    p_sweep.add_argument("--levels", type=int, default=None)
    p_sweep.add_argument("--repeats", type=int, default=_env_default("repeats"))

    p_eval = sub.add_parser("evaluate", help="replay coverage policies without noise")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--coverage", required=True)
    p_eval.add_argument("--repeats", type=int, default=_env_default("repeats"))

    p_metrics = sub.add_parser("metrics", help="hypervolume / epsilon report over CSV sets")
    p_metrics.add_argument("--sets", nargs="+", required=True, metavar="LABEL=PATH")
    p_metrics.add_argument("--front", help="explicit reference front CSV "
                                           "(default: non-dominated union of all sets)")
    p_metrics.add_argument("--ref", help="raw-space reference point 'x,y' (with --raw)")
    p_metrics.add_argument("--raw", action="store_true",
                           help="skip normalization; requires --ref")
    p_metrics.add_argument("--out", default=_env_default("out"))

    p_roll = sub.add_parser("rollout", help="export one policy's daily trajectory")
    common(p_roll)
    src = p_roll.add_mutually_exclusive_group(required=True)
    src.add_argument("--level", type=float, help="constant restriction level in [0,1]")
    src.add_argument("--action", help="constant action 'p_w,p_s,p_l'")
    src.add_argument("--policy-id", type=int, help="row of --coverage to condition on")
    p_roll.add_argument("--checkpoint")
    p_roll.add_argument("--coverage")
    return parser


# --- configuration assembly -------------------------------------------------------

def load_run_config(args) -> dict:
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}")
    cfg = {
        "params_file": doc.get("params_file"),
        "mode": doc.get("mode", "ode"),
        "objectives": doc.get("objectives", OBJECTIVES_ARH),
        "steps": doc.get("steps", 300_000),
        "seeds": doc.get("seeds", [0]),
        "out_dir": doc.get("out_dir", "out"),
        "levels": doc.get("levels", 100),
        "repeats": doc.get("repeats"),
        "arch": doc.get("arch", "dense-big"),
        "pcn": doc.get("pcn", {}),
        "env": doc.get("env", {}),
    }
    if getattr(args, "params", None):
        cfg["params_file"] = args.params
    if getattr(args, "mode", None):
        cfg["mode"] = args.mode
    if getattr(args, "objectives", None):
        cfg["objectives"] = args.objectives
    if getattr(args, "steps", None) is not None:
        cfg["steps"] = int(args.steps)
    if getattr(args, "seed", None) is not None:
        cfg["seeds"] = [int(args.seed)]
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    if getattr(args, "levels", None) is not None:
        cfg["levels"] = int(args.levels)
    if getattr(args, "repeats", None) is not None:
        cfg["repeats"] = int(args.repeats)
    if getattr(args, "arch", None):
        cfg["arch"] = args.arch
    cfg["mode"] = MODE_ALIASES.get(cfg["mode"], cfg["mode"])
    return cfg


def build_env_config(cfg: dict) -> EnvConfig:
    extra = dict(cfg.get("env", {}))
    for key in ("start", "lockdown_start", "control_start", "holiday_start",
                "holiday_end", "end"):
        if key in extra:
            extra[key] = dt.date.fromisoformat(extra[key])
    if "seed_infections" in extra and extra["seed_infections"] is not None:
        extra["seed_infections"] = tuple(extra["seed_infections"])
    try:
        return EnvConfig(mode=cfg["mode"], objectives=cfg["objectives"], **extra)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid environment configuration: {exc}")


def load_model(cfg: dict):
    try:
        if cfg.get("params_file"):
            return load_parameters(cfg["params_file"])
        return load_default_parameters()
    except ParameterError as exc:
        raise CliError(str(exc))


def reward_unscale_vector(env_cfg: EnvConfig) -> np.ndarray:
    """Multipliers turning scaled episodic returns back into raw units."""
    return np.array([env_cfg.reward_scale[0], env_cfg.sb_unit * env_cfg.reward_scale[1]])


# --- point-set CSV loading ---------------------------------------------------------

def load_point_set(path: str | Path) -> np.ndarray:
    _, rows = csvio.read_csv(path)
    if not rows:
        raise CliError(f"{path}: no data rows")
    for x_col, y_col in (("achieved_return_0", "achieved_return_1"),
                         ("return_0", "return_1"), ("x", "y")):
        if x_col in rows[0]:
            return np.array([[float(r[x_col]), float(r[y_col])] for r in rows])
    raise CliError(f"{path}: no recognized return columns")


# --- subcommands ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args)
    model = load_model(cfg)
    env_cfg = build_env_config(cfg)
    out = Path(cfg["out_dir"])
    unscale = reward_unscale_vector(env_cfg)

    all_fronts = []
    for seed in cfg["seeds"]:
        pcn_cfg = pcn.PcnConfig(env=env_cfg, arch=cfg["arch"], total_steps=cfg["steps"],
                                master_seed=int(seed), **cfg["pcn"])
        result = pcn.train(pcn_cfg, model)
        rows = [(p.policy_id,
                 p.desired_return[0] * unscale[0], p.desired_return[1] * unscale[1],
                 p.desired_horizon,
                 p.achieved_return[0] * unscale[0], p.achieved_return[1] * unscale[1])
                for p in result.coverage]
        csvio.write_csv(out / f"coverage_seed{seed}.csv", "coverage",
                        ["policy_id", "desired_return_0", "desired_return_1",
                         "desired_horizon", "achieved_return_0", "achieved_return_1"], rows)
        csvio.write_csv(out / f"training_log_seed{seed}.csv", "training_log",
                        ["iteration", "steps", "buffer_size", "hypervolume"],
                        [(r["iteration"], r["steps"], r["buffer_size"], r["hypervolume"])
                         for r in result.log_rows])
        nn.save_checkpoint(out / f"checkpoint_seed{seed}.npz", result.net,
                           extra={"conditioning_scale": result.cond_scale.tolist(),
                                  "objectives": env_cfg.objectives, "mode": env_cfg.mode,
                                  "master_seed": int(seed)})
        all_fronts.append(np.array([p.achieved_return for p in result.coverage]) * unscale)
        print(f"seed {seed}: {result.steps_used} env steps, "
              f"{len(result.coverage)} coverage points")

    union = pareto.nondominated_filter(np.vstack(all_fronts))
    union = union[np.lexsort(union.T)]
    csvio.write_csv(out / "coverage_union.csv", "coverage",
                    ["policy_id", "desired_return_0", "desired_return_1", "desired_horizon",
                     "achieved_return_0", "achieved_return_1"],
                    [(i, p[0], p[1], "", p[0], p[1]) for i, p in enumerate(union)])
    csvio.write_metadata(out / "train_metadata.json", "train", cfg, cfg["seeds"])
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    model = load_model(cfg)
    env_cfg = build_env_config(cfg)
    out = Path(cfg["out_dir"])
    repeats = cfg["repeats"] or 1
    unscale = reward_unscale_vector(env_cfg)
    result = fixed_policy_sweep(env_cfg, model, n_levels=cfg["levels"], repeats=repeats,
                                master_seed=cfg["seeds"][0])
    csvio.write_csv(out / "baseline.csv", "baseline",
                    ["level", "return_0", "return_1", "nondominated"],
                    [(r.level, r.episodic_return[0] * unscale[0],
                      r.episodic_return[1] * unscale[1], int(r.nondominated))
                     for r in result.rows])
    csvio.write_metadata(out / "sweep_metadata.json", "sweep", cfg, cfg["seeds"])
    print(f"swept {len(result.rows)} levels, {int(sum(r.nondominated for r in result.rows))} "
          f"non-dominated")
    return 0


def _load_checkpoint_for_env(path: str, env_cfg: EnvConfig):
    try:
        net, extra = nn.load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}")
    if extra.get("objectives") != env_cfg.objectives or extra.get("mode") != env_cfg.mode:
        raise CliError(
            f"checkpoint was trained for ({extra.get('objectives')}, {extra.get('mode')}) "
            f"but the run is configured for ({env_cfg.objectives}, {env_cfg.mode})")
    return net, np.asarray(extra["conditioning_scale"])


def _load_coverage(path: str, unscale: np.ndarray) -> list[pcn.CoveragePoint]:
    _, rows = csvio.read_csv(path)
    if not rows:
        raise CliError(f"{path}: empty coverage set")
    points = []
    for row in rows:
        try:
            desired = (float(row["desired_return_0"]) / unscale[0],
                       float(row["desired_return_1"]) / unscale[1])
            achieved = (float(row["achieved_return_0"]) / unscale[0],
                        float(row["achieved_return_1"]) / unscale[1])
            horizon = float(row["desired_horizon"] or 1)
            points.append(pcn.CoveragePoint(int(row["policy_id"]), desired, horizon, achieved))
        except (KeyError, ValueError) as exc:
            raise CliError(f"{path}: not a coverage CSV ({exc})")
    return points


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args)
    model = load_model(cfg)
    env_cfg = build_env_config(cfg)
    out = Path(cfg["out_dir"])
    unscale = reward_unscale_vector(env_cfg)
    net, cond_scale = _load_checkpoint_for_env(args.checkpoint, env_cfg)
    coverage = _load_coverage(args.coverage, unscale)
    n_eval = cfg["repeats"] or (10 if env_cfg.mode == "stochastic" else 1)
    env = MobelcovEnv(env_cfg, model)
    rows, i_eps, i_eps_mean = pcn.evaluate_policies(net, cond_scale, coverage, env,
                                                    n_eval, master_seed=cfg["seeds"][0])
    csvio.write_csv(out / "robustness.csv", "robustness",
                    ["policy_id", "desired_return_0", "desired_return_1", "desired_horizon",
                     "achieved_return_0", "achieved_return_1"],
                    [(r.policy_id, r.desired_return[0] * unscale[0],
                      r.desired_return[1] * unscale[1], r.desired_horizon,
                      r.achieved_mean[0] * unscale[0], r.achieved_mean[1] * unscale[1])
                     for r in rows])
    csvio.write_csv(out / "robustness_summary.csv", "robustness_summary",
                    ["i_eps", "i_eps_mean", "n_eval"], [(i_eps, i_eps_mean, n_eval)])
    csvio.write_metadata(out / "evaluate_metadata.json", "evaluate", cfg, cfg["seeds"],
                         extra={"checkpoint": args.checkpoint, "coverage": args.coverage,
                                "i_eps": i_eps, "i_eps_mean": i_eps_mean})
    print(f"evaluated {len(rows)} policies: I_eps={i_eps:.6f} I_eps_mean={i_eps_mean:.6f}")
    return 0


def cmd_metrics(args) -> int:
    sets = {}
    for item in args.sets:
        if "=" not in item:
            raise CliError(f"--sets entries must be LABEL=PATH, got {item!r}")
        label, path = item.split("=", 1)
        sets[label] = load_point_set(path)
    front = load_point_set(args.front) if args.front else None
    out = Path(args.out or "out")

    if args.raw:
        if not args.ref:
            raise CliError("--raw requires --ref 'x,y'")
        try:
            ref = np.array([float(x) for x in args.ref.split(",")])
        except ValueError:
            raise CliError(f"cannot parse --ref {args.ref!r}")
        if front is None:
            front = pareto.nondominated_filter(np.vstack(list(sets.values())))
        if "front" not in sets and args.front:
            sets = {"front": front, **sets}
        rows = []
        for label, points in sets.items():
            i_eps, i_eps_mean = pareto.epsilon_indicators(front, points)
            rows.append((label, pareto.hypervolume_2d(points, ref), i_eps, i_eps_mean,
                         "", "", "", ""))
    else:
        pool = list(sets.values()) + ([front] if front is not None else [])
        bounds = pareto.NormalizationBounds.from_point_sets(*pool)
        if front is None:
            front = pareto.nondominated_filter(np.vstack(list(sets.values())))
        front_n = pareto.normalize_points(front, bounds)
        rows = []
        for label, points in sets.items():
            points_n = pareto.normalize_points(points, bounds)
            points_n = pareto.nondominated_filter(points_n)
            i_eps, i_eps_mean = pareto.epsilon_indicators(front_n, points_n)
            rows.append((label, pareto.hypervolume_2d(points_n, (0.0, 0.0)),
                         i_eps, i_eps_mean,
                         bounds.lo[0], bounds.hi[0], bounds.lo[1], bounds.hi[1]))

    csvio.write_csv(out / "metrics.csv", "metrics",
                    ["label", "hypervolume", "i_eps", "i_eps_mean",
                     "lo_0", "hi_0", "lo_1", "hi_1"], rows)
    csvio.write_metadata(out / "metrics_metadata.json", "metrics",
                         {"sets": args.sets, "front": args.front, "ref": args.ref,
                          "raw": args.raw}, [])
    for row in rows:
        print(f"{row[0]}: hypervolume={row[1]:.6g} i_eps={row[2]:.6g} i_eps_mean={row[3]:.6g}")
    return 0


def cmd_rollout(args) -> int:
    cfg = load_run_config(args)
    model = load_model(cfg)
    env_cfg = build_env_config(cfg)
    out = Path(cfg["out_dir"])
    env = MobelcovEnv(env_cfg, model)
    rng = derive_rng(cfg["seeds"][0], "rollout-env") if env_cfg.mode == "stochastic" else None

    if args.policy_id is not None:
        if not (args.checkpoint and args.coverage):
            raise CliError("--policy-id requires --checkpoint and --coverage")
        unscale = reward_unscale_vector(env_cfg)
        net, cond_scale = _load_checkpoint_for_env(args.checkpoint, env_cfg)
        points = {p.policy_id: p for p in _load_coverage(args.coverage, unscale)}
        if args.policy_id not in points:
            raise CliError(f"policy id {args.policy_id} not present in {args.coverage}")
        point = points[args.policy_id]
        desired = np.array(point.desired_return)
        horizon = point.desired_horizon

        def pick_action(state, obs):
            return nn.policy_forward(net, obs, desired * cond_scale[:2],
                                     horizon * cond_scale[2])
        label = f"policy_{args.policy_id}"
    else:
        if args.action is not None:
            try:
                constant = tuple(float(x) for x in args.action.split(","))
            except ValueError:
                raise CliError(f"cannot parse --action {args.action!r}")
        else:
            constant = (args.level, args.level, args.level)

        def pick_action(state, obs):
            return constant
        label = "fixed"
        desired = None

    state, info = env.reset(rng, collect_daily=True)
    daily = list(info["daily"])
    done = False
    while not done:
        obs = env.observe(state)
        action = pick_action(state, obs)
        state, reward, done, step_info = env.step(state, action, rng, collect_daily=True)
        daily.extend(step_info["daily"])
        if desired is not None:
            desired = desired - reward
            horizon = max(horizon - 1.0, 1.0)

    csvio.write_csv(out / f"rollout_{label}.csv", "rollout",
                    ["dates", "i_hosp_new", "i_icu_new", "d_new", "p_w", "p_s", "p_l"],
                    [(r["dates"], r["i_hosp_new"], r["i_icu_new"], r["d_new"],
                      r["p_w"], r["p_s"], r["p_l"]) for r in daily])
    csvio.write_metadata(out / f"rollout_{label}_metadata.json", "rollout", cfg, cfg["seeds"])
    print(f"wrote {len(daily)} daily rows for {label}")
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "evaluate": cmd_evaluate,
            "metrics": cmd_metrics, "rollout": cmd_rollout}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (CliError, ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
