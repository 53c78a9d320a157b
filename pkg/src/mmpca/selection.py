"""Integrated-classification-likelihood model selection over (Q, K) grids."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import CountMatrix
from .model import FitConfig, FitResult, fit


def icl(bound: float, n_clusters: int, n_topics: int, n_words: int,
        n_docs: int) -> float:
    """Penalized bound for selecting the cluster/topic counts.

    icl = bound - K(V-1)/2 * log(Q) - (Q-1)/2 * log(N), natural logs.
    The topic penalty charges the K(V-1) free beta entries against the
    Q aggregated observations they are estimated from; the mixture
    penalty charges the Q-1 free weights against the N observations.
    """
    if n_clusters < 1 or n_topics < 1 or n_words < 2 or n_docs < 1:
        raise ValueError("need Q >= 1, K >= 1, V >= 2, N >= 1")
    return (
        bound
        - 0.5 * n_topics * (n_words - 1) * math.log(n_clusters)
        - 0.5 * (n_clusters - 1) * math.log(n_docs)
    )


@dataclass
class ModelScore:
    """One grid cell: the fitted bound and its penalized score."""

    n_clusters: int
    n_topics: int
    bound: float
    icl: float
    fit: FitResult | None = None
    error: str | None = None


@dataclass
class GridResult:
    table: list[ModelScore]
    best: tuple[int, int]


def _fit_cell(args):
    x, q, k, cfg = args
    try:
        result = fit(x, q, k, cfg)
        score = icl(result.bound, q, k, x.n_words, x.n_docs)
        return ModelScore(q, k, result.bound, score, fit=result)
    except Exception as exc:  # recorded, not fatal
        return ModelScore(q, k, math.nan, math.nan, error=str(exc))


def grid_search(x: CountMatrix, q_values, k_values,
                config: FitConfig | None = None, threads: int = 1,
                keep_fits: bool = False) -> GridResult:
    """Fit every (Q, K) cell and rank by ICL.

    Cells are independent; each gets its own deterministic seed stream
    derived from the base config seed, so results do not depend on
    `threads`.  The table is row-major over (q_values, k_values); ties
    break toward smaller Q, then smaller K.
    """
    q_values = [int(q) for q in q_values]
    k_values = [int(k) for k in k_values]
    if not q_values or not k_values:
        raise ValueError("empty model ranges")
    cfg = config or FitConfig()
    children = np.random.SeedSequence(cfg.seed).spawn(len(q_values) * len(k_values))
    tasks = []
    for idx, (q, k) in enumerate((q, k) for q in q_values for k in k_values):
        cell_cfg = dataclasses.replace(
            cfg, seed=int(children[idx].generate_state(1)[0])
        )
        tasks.append((x, q, k, cell_cfg))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            table = list(pool.map(_fit_cell, tasks))
    else:
        table = [_fit_cell(t) for t in tasks]

    scored = [s for s in table if s.error is None]
    if not scored:
        raise RuntimeError(
            "every grid cell failed; first error: " + str(table[0].error)
        )
    best = scored[0]
    for s in scored[1:]:
        if s.icl > best.icl:
            best = s
    if not keep_fits:
        for s in table:
            s.fit = None
    return GridResult(table, (best.n_clusters, best.n_topics))
