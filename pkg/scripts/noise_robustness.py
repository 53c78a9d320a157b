#!/usr/bin/env python3
"""Mean-ARI-versus-noise sweep, one CSV per imbalance level.

Reproduces the robustness protocol: for each lambda in {1, 0.85, 0.7}
run `mmpca bench noise` over the epsilon grid 0:0.7:0.05 and write a
plot-ready CSV per lambda.  Expect hours at the full replicate count;
pass --replicates 3 for a quick look.
"""

import argparse
import subprocess
import sys


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replicates", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()

    for lam in ("1.0", "0.85", "0.7"):
        cmd = [
            sys.executable, "-m", "mmpca.cli", "bench", "noise",
            "--epsilon-grid", "0:0.7:0.05",
            "--lambda", lam,
            "--replicates", str(args.replicates),
            "--seed", str(args.seed),
            "--out", f"{args.out_dir}/noise_lambda{lam}.csv",
        ]
        if args.threads is not None:
            cmd += ["--threads", str(args.threads)]
        print("+", " ".join(cmd), flush=True)
        code = subprocess.call(cmd)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
