#!/usr/bin/env python3
"""Run every CLI command on the shipped configurations and summarize the results."""
import argparse
import sys
from pathlib import Path

from mffbsde.cli import run

ROOT = Path(__file__).resolve().parent.parent
JOBS = [
    ("solve-fbsde", "zero_fbsde.json", []),
    ("solve-fbsde", "scalar_example_solve.json", []),
    ("verify-conditions", "scalar_example_solve.json", ["--strict"]),
    ("verify-conditions", "scalar_example_violation.json", ["--strict"]),
    ("solve-sde", "linear_sde.json", []),
    ("solve-bsde", "linear_bsde.json", []),
    ("lq-forward", "flq_desk.json", []),
    ("lq-backward", "blq_desk.json", []),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs"), help="parent output directory")
    args = parser.parse_args()
    for command, config, extra in JOBS:
        out = args.out / f"{command}-{Path(config).stem}"
        code = run([command, "--config", str(ROOT / "configs" / config), "--out", str(out)] + extra)
        print(f"{command:18s} {config:26s} exit {code}")
        run(["report", "--out", str(out)])
    return 0


if __name__ == "__main__":
    sys.exit(main())
