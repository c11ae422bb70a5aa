#!/usr/bin/env python3
"""Desk-scale experiment: train 3 seeds at 50k env steps on the deterministic
environment, sweep the 100-level fixed baseline, replay every learned policy
without noise, and emit the comparison metrics. Everything goes through the
CLI so the artifacts match what `mobelcov ...` produces by hand.

Roughly 45 minutes of wall clock on a laptop-class machine; pass --steps to
shrink it for a smoke run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from mobelcov.cli import main as cli  # noqa: E402


def run(argv: list[str]) -> None:
    print(f"$ mobelcov {' '.join(argv)}", flush=True)
    rc = cli(argv)
    if rc != 0:
        raise SystemExit(f"command failed with exit code {rc}: {argv}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/desk_scale")
    parser.add_argument("--steps", type=int, default=50_000)
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--mode", choices=["ode", "binomial"], default="ode")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "run_config.json"
    cfg_path.write_text(json.dumps({
        "mode": args.mode,
        "objectives": "arh-sb",
        "steps": args.steps,
        "seeds": args.seeds,
    }, indent=1))

    run(["sweep", "--config", str(cfg_path), "--out", str(out)])
    run(["train", "--config", str(cfg_path), "--out", str(out)])
    for seed in args.seeds:
        run(["evaluate", "--config", str(cfg_path),
             "--checkpoint", str(out / f"checkpoint_seed{seed}.npz"),
             "--coverage", str(out / f"coverage_seed{seed}.csv"),
             "--out", str(out / f"eval_seed{seed}")])
    sets = [f"pcn_seed{seed}={out}/coverage_seed{seed}.csv" for seed in args.seeds]
    sets.append(f"fixed={out}/baseline.csv")
    run(["metrics", "--sets", *sets, "--out", str(out)])
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
