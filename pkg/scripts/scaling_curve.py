#!/usr/bin/env python3
"""Wall-time-versus-N curve for the greedy optimizer (fixed Q=6, K=4, V=900)."""

import argparse
import subprocess
import sys


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-grid", default="100:1000:100")
    parser.add_argument("--replicates", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default="results/scaling.csv")
    args = parser.parse_args()

    cmd = [
        sys.executable, "-m", "mmpca.cli", "bench", "time",
        "--n-grid", args.n_grid,
        "--replicates", str(args.replicates),
        "--seed", str(args.seed),
        "--out", args.out,
    ]
    if args.threads is not None:
        cmd += ["--threads", str(args.threads)]
    print("+", " ".join(cmd), flush=True)
    return subprocess.call(cmd)


if __name__ == "__main__":
    sys.exit(main())
