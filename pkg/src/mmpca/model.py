"""Greedy classification-VEM clustering for the mixture of multinomial PCA.

The optimizer maximizes a variational lower bound on the classification
log-likelihood log p(X, Y | beta, pi) jointly over the hard partition Y
and the variational state.  With Y fixed the model reduces to LDA on the
Q aggregated meta-observations, so the bound splits into a sum of
per-cluster LDA bounds plus sum_q N_q log pi_q.  A swap moves one
observation between clusters and touches exactly two meta-observations,
which keeps its evaluation local: re-run the fixed point on those two
rows, re-optimize pi in closed form, and compare.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy
from scipy import sparse

from . import __version__
from .corpus import CountMatrix, MetaCorpus, Partition, aggregate
from .lda import (
    LdaConfig,
    _alpha_const,
    _log_beta,
    _row_ve,
    _rows_ve,
    as_alpha,
    elbo_lda,
    fit_lda,
    m_step_beta,
    smooth_topics,
)
from .metrics import ari as ari_score


def init_partition(n_docs: int, n_clusters: int, seed,
                   strategy: str = "random_balanced",
                   labels=None) -> Partition:
    """Starting partition for one restart.

    `random_balanced` permutes near-equal blocks: cluster sizes differ by
    at most one, deterministically per seed.  `provided` validates and
    copies `labels`.
    """
    if n_clusters > n_docs:
        raise ValueError(f"{n_clusters} clusters exceed {n_docs} observations")
    if strategy == "provided":
        if labels is None:
            raise ValueError("strategy 'provided' needs labels")
        y = Partition(np.array(labels, dtype=np.int64), n_clusters)
        if np.any(y.sizes() == 0):
            raise ValueError("provided labels leave a cluster empty")
        return y
    if strategy != "random_balanced":
        raise ValueError(f"unknown strategy '{strategy}'")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    base, extra = divmod(n_docs, n_clusters)
    blocks = np.repeat(np.arange(n_clusters), base)
    blocks = np.concatenate([blocks, np.arange(extra)])
    return Partition(rng.permutation(blocks), n_clusters)


def estimate_pi(y: Partition) -> np.ndarray:
    """Closed-form mixture weights: pi_q = N_q / N."""
    sizes = y.sizes()
    return sizes / sizes.sum()


def clustering_term(y: Partition, pi) -> float:
    """log p(Y | pi) = sum_q N_q log pi_q."""
    sizes = y.sizes()
    pi = np.asarray(pi, dtype=np.float64)
    occupied = sizes > 0
    if np.any(pi[occupied] <= 0.0):
        raise FloatingPointError("occupied cluster with zero mixture weight")
    return float(sizes[occupied] @ np.log(pi[occupied]))


def _sizes_term(sizes: np.ndarray) -> float:
    """Clustering term at the optimal pi: sum_q N_q log(N_q / N)."""
    n = sizes.sum()
    occ = sizes[sizes > 0].astype(np.float64)
    return float(occ @ np.log(occ / n))


@dataclass
class MmpcaState:
    """Mutable optimizer state; `meta` always equals aggregate(x, partition)."""

    x: CountMatrix
    partition: Partition
    meta: MetaCorpus
    beta: np.ndarray                # (V, K), fixed during greedy epochs
    log_beta: np.ndarray
    alpha: np.ndarray               # (K,)
    gamma: np.ndarray               # (Q, K)
    phi: np.ndarray                 # (Q, V, K)
    cluster_bounds: np.ndarray      # (Q,) per-cluster LDA bound terms
    bound: float

    @property
    def n_clusters(self) -> int:
        return self.meta.n_clusters

    @property
    def pi(self) -> np.ndarray:
        return estimate_pi(self.partition)

    def refresh_bound(self) -> float:
        self.bound = float(self.cluster_bounds.sum()
                           + _sizes_term(self.meta.cluster_sizes))
        return self.bound


@dataclass
class FitConfig:
    """Settings for one clustering run."""

    max_epochs: int = 7
    restarts: int = 5
    seed: int = 0
    swap_ve_iters: int = 5
    alpha: float | np.ndarray = 1.0
    beta_init: str = "from_lda"      # from_lda | provided | random
    beta: np.ndarray | None = None   # used when beta_init == "provided"
    beta_refresh: bool = False       # re-run the beta M-step after each epoch
    init_strategy: str = "random_balanced"
    init_labels: np.ndarray | None = None
    init_ve_iters: int = 25
    ve_tol: float = 1e-8
    lda: LdaConfig = field(default_factory=LdaConfig)

    def __post_init__(self):
        if self.max_epochs < 1 or self.restarts < 1:
            raise ValueError("max_epochs and restarts must be >= 1")
        if self.swap_ve_iters < 1 or self.init_ve_iters < 1:
            raise ValueError("fixed-point iteration counts must be >= 1")
        if self.beta_init not in ("from_lda", "provided", "random"):
            raise ValueError(f"unknown beta_init '{self.beta_init}'")


@dataclass
class SwapDelta:
    """Locally re-optimized effect of moving one observation src -> dst."""

    delta: float
    new_gamma_src: np.ndarray | None = None
    new_gamma_dst: np.ndarray | None = None
    new_phi_src: np.ndarray | None = None
    new_phi_dst: np.ndarray | None = None
    new_pi: np.ndarray | None = None
    new_bound_src: float = 0.0
    new_bound_dst: float = 0.0


@dataclass
class FitResult:
    """Best restart of a clustering run plus its reproducibility manifest."""

    partition: Partition
    beta: np.ndarray
    pi: np.ndarray
    gamma: np.ndarray
    bound: float
    bound_trace: list[float]
    ari_trace: list[float] | None
    epochs_run: int
    swaps_per_epoch: list[int]
    manifest: dict


def build_state(x: CountMatrix, y: Partition, beta, alpha,
                ve_iters: int = 25, ve_tol: float = 1e-8) -> MmpcaState:
    """Aggregate, run the fixed point on every meta-observation, and score."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2 or beta.shape[0] != x.n_words:
        raise ValueError(f"beta must have {x.n_words} rows, got {beta.shape}")
    alpha = as_alpha(alpha, beta.shape[1])
    meta = aggregate(x, y)
    if np.any(meta.cluster_sizes == 0):
        raise ValueError("every cluster must be nonempty")
    log_beta = _log_beta(beta)
    n_clusters = meta.n_clusters
    n_topics = beta.shape[1]
    const = _alpha_const(alpha)
    gamma = np.empty((n_clusters, n_topics))
    phi = np.empty((n_clusters, x.n_words, n_topics))
    cluster_bounds = np.empty(n_clusters)
    for q in range(n_clusters):
        row = meta.counts[q].astype(np.float64)
        start = alpha + row.sum() / n_topics
        gamma[q], phi[q], cluster_bounds[q], _ = _row_ve(
            row, beta, log_beta, alpha, start, ve_iters, ve_tol, const
        )
    state = MmpcaState(x, y, meta, beta, log_beta, alpha, gamma, phi,
                       cluster_bounds, 0.0)
    state.refresh_bound()
    return state


def full_bound(state: MmpcaState) -> float:
    """Recompute the bound from scratch at the state's variational parameters.

    Sum of the per-cluster LDA bounds evaluated at (gamma, phi, beta) plus
    the clustering term at the size-optimal pi.  Pure function.
    """
    csr = sparse.csr_matrix(state.meta.counts)
    rows, cols = csr.nonzero()
    flat_phi = state.phi[rows, cols]
    lda_part = elbo_lda(csr, state.gamma, flat_phi, state.beta, state.alpha)
    return lda_part + clustering_term(state.partition, estimate_pi(state.partition))


def evaluate_swap(state: MmpcaState, i: int, src: int, dst: int,
                  swap_ve_iters: int = 5, ve_tol: float = 1e-8) -> SwapDelta | None:
    """Score moving observation i from cluster src to cluster dst.

    Forms the two tentative meta-rows, re-runs the fixed point on them
    (warm-started from the current gamma rows), re-optimizes pi in closed
    form, and returns the bound difference.  Does not mutate the state.
    Returns None when the swap is inadmissible (src is a singleton) and a
    zero delta when dst == src.
    """
    if src != state.partition.labels[i]:
        raise ValueError(f"observation {i} is not in cluster {src}")
    if dst == src:
        return SwapDelta(0.0)
    sizes = state.meta.cluster_sizes
    if sizes[src] <= 1:
        return None

    xi = state.x.doc_dense(i)
    const = _alpha_const(state.alpha)
    row_src = (state.meta.counts[src] - xi).astype(np.float64)
    row_dst = (state.meta.counts[dst] + xi).astype(np.float64)
    g_src, p_src, b_src, _ = _row_ve(
        row_src, state.beta, state.log_beta, state.alpha,
        state.gamma[src].copy(), swap_ve_iters, ve_tol, const,
    )
    g_dst, p_dst, b_dst, _ = _row_ve(
        row_dst, state.beta, state.log_beta, state.alpha,
        state.gamma[dst].copy(), swap_ve_iters, ve_tol, const,
    )
    new_sizes = sizes.copy()
    new_sizes[src] -= 1
    new_sizes[dst] += 1
    delta = (
        b_src + b_dst + _sizes_term(new_sizes)
        - state.cluster_bounds[src] - state.cluster_bounds[dst]
        - _sizes_term(sizes)
    )
    return SwapDelta(float(delta), g_src, g_dst, p_src, p_dst,
                     new_sizes / new_sizes.sum(), b_src, b_dst)


def _apply_swap(state: MmpcaState, i: int, src: int, dst: int, sd: SwapDelta) -> None:
    words, vals = state.x.doc(i)
    state.meta.counts[src, words] -= vals
    state.meta.counts[dst, words] += vals
    state.meta.cluster_sizes[src] -= 1
    state.meta.cluster_sizes[dst] += 1
    state.partition.labels[i] = dst
    state.gamma[src], state.gamma[dst] = sd.new_gamma_src, sd.new_gamma_dst
    state.phi[src], state.phi[dst] = sd.new_phi_src, sd.new_phi_dst
    state.cluster_bounds[src] = sd.new_bound_src
    state.cluster_bounds[dst] = sd.new_bound_dst
    state.refresh_bound()


def greedy_epoch(state: MmpcaState, rng: np.random.Generator,
                 swap_ve_iters: int = 5, ve_tol: float = 1e-8,
                 on_swap=None) -> tuple[MmpcaState, int]:
    """One pass over all observations in seeded random order.

    For each observation, every admissible swap is scored (the source-row
    fixed point is shared across candidates and the candidate rows run as
    one batch) and the best is applied only when its delta is strictly
    positive; ties break toward the smallest candidate cluster index.
    Mutates `state` in place and returns it with the number of validated
    swaps.
    """
    n_clusters = state.n_clusters
    n_validated = 0
    if n_clusters == 1:
        return state, 0
    const = _alpha_const(state.alpha)
    for i in rng.permutation(state.x.n_docs):
        src = int(state.partition.labels[i])
        sizes = state.meta.cluster_sizes
        if sizes[src] <= 1:
            continue
        xi = state.x.doc_dense(i)
        row_src = (state.meta.counts[src] - xi).astype(np.float64)
        g_src, p_src, b_src, _ = _row_ve(
            row_src, state.beta, state.log_beta, state.alpha,
            state.gamma[src].copy(), swap_ve_iters, ve_tol, const,
        )
        dsts = np.array([q for q in range(n_clusters) if q != src])
        rows = state.meta.counts[dsts].astype(np.float64) + xi
        g_all, p_all, b_all, _ = _rows_ve(
            rows, state.beta, state.log_beta, state.alpha,
            state.gamma[dsts], swap_ve_iters, ve_tol, const,
        )
        st_old = _sizes_term(sizes)
        shared = b_src - state.cluster_bounds[src] - st_old
        deltas = np.empty(len(dsts))
        for j, dst in enumerate(dsts):
            new_sizes = sizes.copy()
            new_sizes[src] -= 1
            new_sizes[dst] += 1
            deltas[j] = (shared + b_all[j]
                         - state.cluster_bounds[dst] + _sizes_term(new_sizes))
        j_best = int(np.argmax(deltas))  # first max: smallest cluster index
        if deltas[j_best] > 0.0:
            dst = int(dsts[j_best])
            new_sizes = sizes.copy()
            new_sizes[src] -= 1
            new_sizes[dst] += 1
            sd = SwapDelta(float(deltas[j_best]), g_src, g_all[j_best],
                           p_src, p_all[j_best], new_sizes / new_sizes.sum(),
                           b_src, float(b_all[j_best]))
            _apply_swap(state, i, src, dst, sd)
            n_validated += 1
            if on_swap is not None:
                on_swap(state)
    return state, n_validated


def _refresh_beta(state: MmpcaState, smoothing: float) -> None:
    """Optional end-of-epoch M-step for beta on the meta-corpus."""
    meta_csr = state.meta.to_count_matrix().counts
    rows, cols = meta_csr.nonzero()
    flat_phi = state.phi[rows, cols]
    state.beta = m_step_beta(meta_csr, flat_phi, delta=smoothing)
    state.log_beta = _log_beta(state.beta)
    const = _alpha_const(state.alpha)
    for q in range(state.n_clusters):
        row = state.meta.counts[q].astype(np.float64)
        state.gamma[q], state.phi[q], state.cluster_bounds[q], _ = _row_ve(
            row, state.beta, state.log_beta, state.alpha,
            state.gamma[q].copy(), 25, 1e-8, const,
        )
    state.refresh_bound()


def _resolve_beta(x: CountMatrix, n_topics: int, cfg: FitConfig,
                  seed_seq: np.random.SeedSequence) -> np.ndarray:
    if cfg.beta_init == "provided":
        if cfg.beta is None:
            raise ValueError("beta_init 'provided' needs a beta matrix")
        beta = np.asarray(cfg.beta, dtype=np.float64)
        if beta.shape != (x.n_words, n_topics):
            raise ValueError(f"beta must be {x.n_words} x {n_topics}")
        return smooth_topics(beta, cfg.lda.smoothing)
    if cfg.beta_init == "random":
        rng = np.random.default_rng(seed_seq)
        return smooth_topics(rng.gamma(1.0, size=(x.n_words, n_topics)),
                             cfg.lda.smoothing)
    lda_cfg = dataclasses.replace(cfg.lda, seed=int(seed_seq.generate_state(1)[0]))
    return fit_lda(x, n_topics, alpha=cfg.alpha, config=lda_cfg).beta


def _config_manifest(cfg: FitConfig, n_clusters: int, n_topics: int) -> dict:
    entry = dataclasses.asdict(cfg)
    entry["alpha"] = np.asarray(cfg.alpha).tolist()
    entry["beta"] = None if cfg.beta is None else list(np.shape(cfg.beta))
    entry["init_labels"] = (None if cfg.init_labels is None
                            else len(cfg.init_labels))
    entry["n_clusters"] = n_clusters
    entry["n_topics"] = n_topics
    return entry


def _run_restart(x: CountMatrix, n_clusters: int, cfg: FitConfig, beta,
                 child_seq: np.random.SeedSequence, truth=None):
    """One restart: balanced init, meta fixed point, greedy epochs."""
    rng = np.random.default_rng(child_seq)
    y = init_partition(x.n_docs, n_clusters, rng,
                       strategy=cfg.init_strategy, labels=cfg.init_labels)
    state = build_state(x, y, beta, cfg.alpha,
                        ve_iters=cfg.init_ve_iters, ve_tol=cfg.ve_tol)
    trace = [state.bound]
    ari_trace = None
    if truth is None:
        def on_swap(s, _t=trace):
            _t.append(s.bound)
    else:
        ari_trace = [ari_score(truth, state.partition.labels)]

        def on_swap(s, _t=trace, _a=ari_trace):
            _t.append(s.bound)
            _a.append(ari_score(truth, s.partition.labels))

    swaps_per_epoch: list[int] = []
    for _ in range(cfg.max_epochs):
        _, n_swaps = greedy_epoch(state, rng, cfg.swap_ve_iters,
                                  cfg.ve_tol, on_swap)
        swaps_per_epoch.append(n_swaps)
        if n_swaps == 0:
            break
        if cfg.beta_refresh:
            _refresh_beta(state, cfg.lda.smoothing)
            trace.append(state.bound)
    return state, trace, ari_trace, swaps_per_epoch


def fit(x: CountMatrix, n_clusters: int, n_topics: int,
        config: FitConfig | None = None, truth=None) -> FitResult:
    """Cluster a corpus with the greedy bound maximizer.

    beta is fitted once on the raw observations (unless provided), then
    each restart initializes a balanced random partition, runs the fixed
    point on the meta-observations, and sweeps greedy epochs until an
    epoch validates no swap or `max_epochs` is reached.  The restart with
    the highest final bound wins.  Fully deterministic per seed.
    """
    cfg = config or FitConfig()
    if n_clusters < 1 or n_topics < 1:
        raise ValueError("n_clusters and n_topics must be >= 1")
    if n_clusters > x.n_docs:
        raise ValueError(f"{n_clusters} clusters exceed {x.n_docs} observations")
    if truth is not None:
        truth = np.asarray(truth)
        if len(truth) != x.n_docs:
            raise ValueError("truth labels length mismatch")

    seed_seq = np.random.SeedSequence(cfg.seed)
    beta_seq, *restart_seqs = seed_seq.spawn(cfg.restarts + 1)
    beta = _resolve_beta(x, n_topics, cfg, beta_seq)

    best = None
    for child in restart_seqs:
        candidate = _run_restart(x, n_clusters, cfg, beta, child, truth)
        if best is None or candidate[0].bound > best[0].bound:
            best = candidate

    state, trace, ari_trace, swaps_per_epoch = best
    manifest = {
        "seed": cfg.seed,
        "config": _config_manifest(cfg, n_clusters, n_topics),
        "versions": {"mmpca": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    return FitResult(
        partition=state.partition,
        beta=state.beta,
        pi=estimate_pi(state.partition),
        gamma=state.gamma,
        bound=state.bound,
        bound_trace=trace,
        ari_trace=ari_trace,
        epochs_run=len(swaps_per_epoch),
        swaps_per_epoch=swaps_per_epoch,
        manifest=manifest,
    )
