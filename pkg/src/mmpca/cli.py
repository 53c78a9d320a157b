"""Command-line front end: simulate, fit, select, eval, bench.

Structured results go to JSON, tabular results to CSV, count matrices to
MatrixMarket.  Every artifact embeds or sits beside a manifest with the
resolved configuration, seed, versions, input digests and wall time, so
single-threaded runs can be replayed bit-for-bit.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .corpus import (
    LoadError,
    load_labels_csv,
    load_matrix_market,
    load_triplets_csv,
    save_labels_csv,
    save_matrix_market,
)
from .metrics import ari, confusion
from .model import FitConfig, fit
from .selection import grid_search, icl
from .simulate import SimulationConfig, generate


class UsageError(ValueError):
    """Bad flag values; exits with status 2."""


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, config: dict, seed: int, inputs=(),
              wall_seconds: float | None = None) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "mmpca": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": {str(p): _digest(p) for p in inputs},
        "wall_seconds": wall_seconds,
    }


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_corpus(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"input file not found: {path}")
    if path.suffix == ".csv":
        return load_triplets_csv(path)
    return load_matrix_market(path)


def _parse_range(text: str) -> list[int]:
    """'a:b' inclusive integer range."""
    try:
        lo, hi = (int(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"expected 'a:b', got '{text}'") from None
    if hi < lo:
        raise UsageError(f"empty range '{text}'")
    return list(range(lo, hi + 1))


def _parse_grid(text: str) -> list[float]:
    """'start:stop:step' inclusive float grid, or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"expected 'start:stop:step', got '{text}'")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise UsageError(f"non-numeric grid '{text}'") from None
        if step <= 0:
            raise UsageError("grid step must be positive")
        values = []
        v = start
        while v <= stop + 1e-9:
            values.append(round(v, 10))
            v += step
        return values
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError:
        raise UsageError(f"non-numeric grid '{text}'") from None


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MMPCA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"bad MMPCA_THREADS value '{env}'") from None
    return os.cpu_count() or 1


def _sim_config(args) -> SimulationConfig:
    if not (0.0 <= args.epsilon <= 1.0):
        raise UsageError("--epsilon must lie in [0, 1]")
    if not (0.0 < args.lam <= 1.0):
        raise UsageError("--lambda must lie in (0, 1]")
    if args.n < 1 or args.doc_length < 1:
        raise UsageError("--n and --doc-length must be >= 1")
    if args.q_star < 1 or args.k_star < 1 or args.v < args.k_star:
        raise UsageError("need --q-star >= 1 and --v >= --k-star >= 1")
    return SimulationConfig(
        n_docs=args.n, doc_length=args.doc_length, q_star=args.q_star,
        k_star=args.k_star, n_words=args.v, epsilon=args.epsilon,
        imbalance=args.lam, seed=args.seed,
    )


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    config = _sim_config(args)
    corpus = generate(config)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    mtx = Path(str(prefix) + ".mtx")
    labels = Path(str(prefix) + ".labels.csv")
    save_matrix_market(corpus.counts, mtx)
    save_labels_csv(corpus.labels.labels, labels)
    cfg_dict = {
        k: v for k, v in dataclasses.asdict(config).items()
        if k not in ("theta_star", "beta_star")
    }
    cfg_dict["theta_star"] = config.resolved_theta().tolist()
    payload = {
        "config": cfg_dict,
        "manifest": _manifest("simulate", cfg_dict, config.seed,
                              wall_seconds=time.perf_counter() - start),
        "outputs": [mtx.name, labels.name],
    }
    _write_json(payload, Path(str(prefix) + ".config.json"))
    print(f"wrote {mtx} ({corpus.counts.n_docs} x {corpus.counts.n_words}), "
          f"{labels}")
    return 0


def _fit_config(args) -> FitConfig:
    if args.epochs < 1 or args.restarts < 1:
        raise UsageError("--epochs and --restarts must be >= 1")
    if args.alpha <= 0:
        raise UsageError("--alpha must be positive")
    if args.swap_ve_iters < 1:
        raise UsageError("--swap-ve-iters must be >= 1")
    return FitConfig(
        max_epochs=args.epochs,
        restarts=args.restarts,
        seed=args.seed,
        swap_ve_iters=args.swap_ve_iters,
        alpha=args.alpha,
        beta_refresh=args.beta_refresh,
    )


def cmd_fit(args) -> int:
    start = time.perf_counter()
    if args.q < 1 or args.k < 1:
        raise UsageError("--q and --k must be >= 1")
    x = _load_corpus(args.input)
    if args.q > x.n_docs:
        raise UsageError(f"--q {args.q} exceeds the {x.n_docs} observations")
    cfg = _fit_config(args)
    truth = load_labels_csv(args.truth) if args.truth else None
    result = fit(x, args.q, args.k, cfg, truth=truth)
    score = icl(result.bound, args.q, args.k, x.n_words, x.n_docs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.input] + ([args.truth] if args.truth else [])
    manifest = _manifest("fit", result.manifest["config"], args.seed,
                         inputs=inputs,
                         wall_seconds=time.perf_counter() - start)
    manifest["versions"] = result.manifest["versions"] | manifest["versions"]
    payload = {
        "labels": result.partition.labels.tolist(),
        "n_clusters": result.partition.n_clusters,
        "n_topics": args.k,
        "pi": result.pi.tolist(),
        "gamma": result.gamma.tolist(),
        "bound": result.bound,
        "bound_trace": result.bound_trace,
        "icl": score,
        "epochs_run": result.epochs_run,
        "swaps_per_epoch": result.swaps_per_epoch,
        "manifest": manifest,
    }
    if truth is not None:
        payload["ari"] = ari(truth, result.partition.labels)
        payload["ari_trace"] = result.ari_trace
    _write_json(payload, out / "fit.json")
    with open(out / "beta.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"topic_{k}" for k in range(args.k)])
        writer.writerows(result.beta.tolist())
    line = f"bound={result.bound:.6f} icl={score:.6f}"
    if truth is not None:
        line += f" ari={payload['ari']:.4f}"
    print(line)
    return 0


def cmd_select(args) -> int:
    start = time.perf_counter()
    x = _load_corpus(args.input)
    q_values = _parse_range(args.q_range)
    k_values = _parse_range(args.k_range)
    if max(q_values) > x.n_docs:
        raise UsageError("largest Q exceeds the number of observations")
    cfg = _fit_config(args)
    result = grid_search(x, q_values, k_values, cfg, threads=_threads(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q", "k", "bound", "icl", "error"])
        for s in result.table:
            writer.writerow([s.n_clusters, s.n_topics, repr(s.bound),
                             repr(s.icl), s.error or ""])
    _write_json(
        _manifest("select",
                  {"q_range": args.q_range, "k_range": args.k_range,
                   "fit": dataclasses.asdict(cfg) | {"beta": None, "init_labels": None}},
                  args.seed, inputs=[args.input],
                  wall_seconds=time.perf_counter() - start),
        Path(str(out) + ".manifest.json"),
    )
    print(f"best q={result.best[0]} k={result.best[1]}")
    return 0


def cmd_eval(args) -> int:
    pred = load_labels_csv(args.pred)
    truth = load_labels_csv(args.truth)
    score = ari(truth, pred)
    table = confusion(truth, pred)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\pred"] + [str(c) for c in table.col_labels])
        for label, row in zip(table.row_labels, table.table):
            writer.writerow([str(label)] + [int(v) for v in row])
    print(f"ari={score:.6f}")
    return 0


def _bench_one(task):
    """One benchmark replicate; top-level so worker processes can pickle it."""
    index, kind, n, epsilon, lam, seed, fit_args = task
    config = SimulationConfig(n_docs=n, epsilon=epsilon, imbalance=lam, seed=seed)
    corpus = generate(config)
    cfg = FitConfig(seed=seed, **fit_args)
    start = time.perf_counter()
    result = fit(corpus.counts, corpus.labels.n_clusters, config.k_star, cfg,
                 truth=corpus.labels.labels)
    wall = time.perf_counter() - start
    score = ari(corpus.labels.labels, result.partition.labels)
    return index, {
        "seed": seed, "epsilon": epsilon, "lambda": lam, "n": n,
        "ari": score, "bound": result.bound, "wall_seconds": wall,
    }


def cmd_bench(args) -> int:
    start = time.perf_counter()
    fit_args = {
        "max_epochs": args.epochs, "restarts": args.restarts,
        "swap_ve_iters": args.swap_ve_iters, "alpha": args.alpha,
    }
    settings = []
    if args.mode == "noise":
        grid = _parse_grid(args.epsilon_grid)
        if any(not 0.0 <= e <= 1.0 for e in grid):
            raise UsageError("epsilon grid must lie in [0, 1]")
        settings = [(args.n, e, args.lam) for e in grid]
    else:
        grid = [int(v) for v in _parse_grid(args.n_grid)]
        if any(v < 1 for v in grid):
            raise UsageError("n grid must be positive")
        settings = [(n, args.epsilon, args.lam) for n in grid]

    base = np.random.SeedSequence(args.seed)
    children = base.spawn(len(settings) * args.replicates)
    tasks = []
    for s_idx, (n, eps, lam) in enumerate(settings):
        for r in range(args.replicates):
            child = children[s_idx * args.replicates + r]
            seed = int(child.generate_state(1)[0])
            tasks.append((len(tasks), args.mode, n, eps, lam, seed, fit_args))

    threads = _threads(args)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_bench_one, tasks))
    else:
        rows = [_bench_one(t) for t in tasks]
    rows.sort(key=lambda pair: pair[0])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fields = ["seed", "epsilon", "lambda", "n", "ari", "bound", "wall_seconds"]
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for _, row in rows:
            writer.writerow(row)
    _write_json(
        _manifest(f"bench {args.mode}",
                  {"settings": settings, "replicates": args.replicates,
                   "fit": fit_args},
                  args.seed, wall_seconds=time.perf_counter() - start),
        Path(str(out) + ".manifest.json"),
    )
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=1.0,
                   help="symmetric Dirichlet hyperparameter")
    p.add_argument("--epochs", type=int, default=7,
                   help="maximum greedy epochs per restart")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--swap-ve-iters", type=int, default=5)
    p.add_argument("--beta-refresh", action="store_true",
                   help="re-run the topic M-step after each epoch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: MMPCA_THREADS or all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmpca",
        description="Cluster count data with the mixture of multinomial PCA.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--doc-length", type=int, default=250)
    p.add_argument("--q-star", type=int, default=6)
    p.add_argument("--k-star", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--v", type=int, default=900)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="cluster a corpus at fixed (Q, K)")
    p.add_argument("--input", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--out", default=".")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="grid search (Q, K) by ICL")
    p.add_argument("--input", required=True)
    p.add_argument("--q-range", required=True, help="inclusive range a:b")
    p.add_argument("--k-range", required=True, help="inclusive range a:b")
    p.add_argument("--out", default="select.csv")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="score predicted labels against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default="confusion.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="replicate benchmark sweeps to CSV")
    bench_sub = p.add_subparsers(dest="mode", required=True)
    for mode, help_text in (("noise", "ARI versus noise level"),
                            ("size", "ARI versus sample size"),
                            ("time", "wall time versus sample size")):
        b = bench_sub.add_parser(mode, help=help_text)
        if mode == "noise":
            b.add_argument("--epsilon-grid", default="0:0.7:0.05")
            b.add_argument("--n", type=int, default=400)
        else:
            b.add_argument("--n-grid", required=True,
                           help="'start:stop:step' or comma list")
            b.add_argument("--epsilon", type=float, default=0.0 if mode == "time" else 0.2)
        b.add_argument("--lambda", dest="lam", type=float,
                       default=1.0 if mode != "size" else 0.85)
        b.add_argument("--replicates", type=int, default=10)
        b.add_argument("--out", default=None)
        _add_fit_flags(b)
        b.set_defaults(func=cmd_bench, mode=mode)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "bench" and args.out is None:
        args.out = f"bench_{args.mode}.csv"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LoadError, ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
