#!/usr/bin/env python3
"""Run the full desk-scale robustness protocol: train, sweep, fit, report.

Writes everything into a self-contained work directory. With the default
grid this trains policies for every noise point, sweeps both controller
families plus the SQL/HL references, fits the five piecewise families to every
curve, and emits the robustness verdict. Expect a few hours on two cores for
the full grid; use --models/--variances to restrict it.
"""

import argparse
import json
import sys
from pathlib import Path

from aqem.cli import main as aqem_main


def build_config(args) -> dict:
    if args.models == ["none"]:
        grid = [{"model": "none"}]
    else:
        grid = [{"model": "none"}]
        for model in args.models:
            symmetric = model in ("normal", "random_telegraph")
            variances = args.variances or ([1, 2, 3] if symmetric else [1, 3, 5, 7])
            for v in variances:
                spec = {"model": model, "variance": float(v)}
                if not symmetric:
                    spec["skewness"] = 0.8509
                grid.append(spec)
    return {
        "seed": args.seed,
        "workers": args.workers,
        "preset": "desk",
        "train": {
            "n_range": [4, args.max_n_train],
            "noise": grid[1] if len(grid) > 1 else grid[0],
            "policy_dir": "policies",
            "population": 40,
            "generations": 100,
            "root_boost": 3,
        },
        "sweep": {
            "n_range": [4, args.max_n],
            "n_range_rl": [4, args.max_n_train],
            "families": ["bayes", "rl"],
            "noise_grid": grid,
            "results": "results.csv",
            "policy_dir": "policies",
            "reference": True,
        },
        "fit": {"results": "results.csv", "reports_dir": "fits", "min_points": 8},
        "report": {"reports_dir": "fits", "out": "report"},
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk", help="work directory")
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--max-n", type=int, default=50)
    ap.add_argument("--max-n-train", type=int, default=20)
    ap.add_argument(
        "--models",
        nargs="*",
        default=["normal"],
        help="noise models to include (default: normal; 'none' for noiseless only)",
    )
    ap.add_argument("--variances", nargs="*", type=float, default=None)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(build_config(args), indent=2))
    print(f"config written to {cfg_path}")

    import os

    os.chdir(out)
    for command in ("train", "sweep", "fit", "report"):
        print(f"== aqem {command}")
        rc = aqem_main([command, "--config", "config.json"])
        if rc != 0:
            print(f"stage {command} failed with exit code {rc}", file=sys.stderr)
            return rc
    print("pipeline complete:", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
