"""Run every shipped scenario through the CLI and write results to one directory.

    python scripts/run_scenarios.py [--out-dir results] [--reps R]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from rankmatch.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]
SIMULATIONS = ["smoke", "dr_correct", "dr_misspecified", "coverage"]
DIAGNOSTICS = [("gram", "gram_copula"), ("gram", "gram_independent"), ("ratio", "ratio"),
               ("rates", "rates"), ("rates", "rates_in_span")]


def run(argv: list[str]) -> int:
    start = time.perf_counter()
    code = cli(argv)
    print(f"{' '.join(argv[:3]):<40} exit {code}  {time.perf_counter() - start:7.1f}s", flush=True)
    return code


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--reps", type=int, help="override the rep count of the simulations")
    args = parser.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    worst = 0
    for name in SIMULATIONS:
        argv = ["simulate", "--config", str(ROOT / "scenarios" / f"{name}.toml"), "--out-dir", str(out)]
        if args.reps:
            argv += ["--reps", str(args.reps)]
        worst = max(worst, run(argv))
    for kind, name in DIAGNOSTICS:
        worst = max(worst, run(["diagnose", kind, "--config", str(ROOT / "scenarios" / f"{name}.toml"),
                                "--out", str(out / f"{name}.json"), "--csv", str(out / f"{name}.csv")]))
    return worst


if __name__ == "__main__":
    sys.exit(main())
