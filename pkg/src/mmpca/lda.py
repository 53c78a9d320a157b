"""Variational EM for latent Dirichlet allocation on sparse counts.

This is the inference engine shared by the whole package: it fits topics
on the raw observations (the initializer for the mixture optimizer) and
scores or re-optimizes the per-cluster meta-observations inside the
greedy clustering loop.  Word-topic responsibilities are stored per
(document, word type) rather than per token: the fixed-point update for
a token depends on the token only through its word identity, so this
collapse is exact and costs O(unique words) instead of O(tokens).

The fixed point iterates phi_vk ∝ beta_vk * exp(E_k) with
E_k = psi(gamma_k) - psi(sum gamma), then gamma = alpha + phi' x.  The
inner loops never materialize phi: with Z_v = sum_k beta_vk exp(E_k),
the responsibility-weighted bound terms reduce exactly to
x . log Z - (gamma - alpha) . E, so one iteration is two matrix-vector
products.  exp(E) is max-shifted before use so products with the floored
beta cannot underflow to zero for any reachable gamma.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .corpus import CountMatrix, MetaCorpus

# Pseudocount added to every beta cell before column normalization; keeps
# log(beta) finite for every observed word.
SMOOTHING_DELTA = 1e-8


def digamma(x):
    """Digamma psi(x) for x > 0 with absolute error below 1e-10.

    The recurrence psi(x) = psi(x + 1) - 1/x shifts the argument up to
    x >= 6, where the asymptotic series in 1/x^2 (terms through x^-14)
    is evaluated by Horner's rule.  Accepts scalars or arrays.
    """
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("digamma requires x > 0")
    acc = np.zeros_like(arr)
    for _ in range(6):
        small = arr < 6.0
        if not small.any():
            break
        acc[small] -= 1.0 / arr[small]
        arr[small] += 1.0
    t = 1.0 / (arr * arr)
    series = 691.0 / 32760.0 - t * (1.0 / 12.0)
    series = 1.0 / 132.0 - t * series
    series = 1.0 / 240.0 - t * series
    series = 1.0 / 252.0 - t * series
    series = 1.0 / 120.0 - t * series
    series = 1.0 / 12.0 - t * series
    psi = acc + np.log(arr) - 0.5 / arr - t * series
    return float(psi[0]) if scalar else psi


def as_alpha(alpha, n_topics: int) -> np.ndarray:
    """Coerce a scalar or vector Dirichlet hyperparameter to shape (K,)."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(n_topics, float(a))
    if a.shape != (n_topics,):
        raise ValueError(f"alpha must be scalar or length {n_topics}")
    if np.any(a <= 0.0) or not np.all(np.isfinite(a)):
        raise ValueError("alpha entries must be positive and finite")
    return a


def smooth_topics(beta, delta: float = SMOOTHING_DELTA) -> np.ndarray:
    """Floor a V x K topic matrix with a pseudocount and renormalize columns."""
    b = np.asarray(beta, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("topic matrix must be V x K")
    if np.any(b < 0.0) or not np.all(np.isfinite(b)):
        raise ValueError("topic matrix entries must be finite and nonnegative")
    b = b + delta
    return b / b.sum(axis=0, keepdims=True)


def check_topic_matrix(beta, tol: float = 1e-12) -> None:
    """Assert the column-stochastic invariant of a topic matrix."""
    b = np.asarray(beta)
    if np.any(b <= 0.0):
        raise ValueError("topic matrix entries must be strictly positive")
    if np.max(np.abs(b.sum(axis=0) - 1.0)) > tol:
        raise ValueError("topic matrix columns must sum to 1")


def _as_csr(corpus) -> sparse.csr_matrix:
    if isinstance(corpus, CountMatrix):
        return corpus.counts
    if isinstance(corpus, MetaCorpus):
        return sparse.csr_matrix(corpus.counts)
    if sparse.issparse(corpus):
        return corpus.tocsr()
    return sparse.csr_matrix(np.asarray(corpus))


def _log_beta(beta) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(beta, dtype=np.float64))


def _expectation_log_theta(gamma: np.ndarray) -> np.ndarray:
    """E[log theta_k] under Dirichlet(gamma): psi(gamma_k) - psi(sum gamma)."""
    if gamma.ndim == 1:
        return digamma(gamma) - digamma(gamma.sum())
    return digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]


def _alpha_const(alpha: np.ndarray) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum())


def _direct_bound(x, gamma, phi, e_log_theta, log_beta, alpha, alpha_const):
    """Literal bound evaluation at a (gamma, phi) pair for one row.

    Applies the 0 * log 0 := 0 convention in the phi-weighted terms.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        log_phi = np.log(phi)
        terms = np.where(phi > 0.0, phi * (e_log_theta + log_beta - log_phi), 0.0)
    return (
        alpha_const
        + x @ terms.sum(axis=1)
        + (alpha - gamma) @ e_log_theta
        - gammaln(gamma.sum())
        + gammaln(gamma).sum()
    )


def _row_ve(x, beta, log_beta, alpha, gamma, max_iters, tol, alpha_const):
    """Single-row fixed point; returns (gamma, phi, bound, converged).

    `x` is a dense float row over the whole vocabulary.  Responsibilities
    for zero-count words are materialized too (they fall out of gamma and
    the bound); a word whose topic mass underflows to zero everywhere is
    an error when observed and yields a uniform row otherwise.
    """
    e = _expectation_log_theta(gamma)
    prev = None
    converged = False
    w = z = e_prev = None
    bound = -np.inf
    for _ in range(max_iters):
        shift = e.max()
        w = np.exp(e - shift)
        z = beta @ w
        bad = z == 0.0
        if bad.any():
            if (x[bad] > 0).any():
                raise FloatingPointError(
                    f"non-finite responsibilities at word index "
                    f"{int(np.flatnonzero(bad & (x > 0))[0])}"
                )
            z = z.copy()
            z[bad] = 1.0
        ratio = x / z
        if not np.all(np.isfinite(ratio)):
            raise FloatingPointError(
                f"non-finite responsibilities at word index "
                f"{int(np.flatnonzero(~np.isfinite(ratio))[0])}"
            )
        gamma = alpha + w * (ratio @ beta)
        e_prev = e
        e = _expectation_log_theta(gamma)
        log_z = np.log(z) + shift
        bound = (
            alpha_const
            + x @ log_z
            - (gamma - alpha) @ e_prev
            - gammaln(gamma.sum())
            + gammaln(gamma).sum()
        )
        if prev is not None and abs(bound - prev) <= tol * abs(prev):
            converged = True
            break
        prev = bound
    phi = beta * w / z[:, None]
    dead = phi.sum(axis=1) == 0.0
    if dead.any():
        phi[dead] = 1.0 / beta.shape[1]
    bound = _direct_bound(x, gamma, phi, e, log_beta, alpha, alpha_const)
    if not np.isfinite(bound):
        raise FloatingPointError("non-finite bound; zero topic mass at an observed word")
    return gamma, phi, float(bound), converged


def _rows_ve(xs, beta, log_beta, alpha, gammas, max_iters, tol, alpha_const):
    """Batched `_row_ve` over B independent rows with per-row stopping.

    Returns (gammas, phis, bounds, converged) with shapes (B, K),
    (B, V, K), (B,), (B,).  Each row follows exactly the update and stop
    rule of `_row_ve`; converged rows freeze while the rest continue.
    """
    n_rows, n_words = xs.shape
    n_topics = gammas.shape[1]
    gammas = gammas.copy()
    e = _expectation_log_theta(gammas)
    w_fin = np.empty((n_rows, n_topics))
    z_fin = np.empty((n_rows, n_words))
    e_fin = np.empty_like(gammas)
    prev = np.full(n_rows, np.nan)
    active = np.ones(n_rows, dtype=bool)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        e_act = e[idx]
        shift = e_act.max(axis=1, keepdims=True)
        w = np.exp(e_act - shift)
        z = w @ beta.T
        bad = z == 0.0
        if bad.any():
            if (xs[idx][bad] > 0).any():
                rows, cols = np.nonzero(bad & (xs[idx] > 0))
                raise FloatingPointError(
                    f"non-finite responsibilities at word index {int(cols[0])}"
                )
            z[bad] = 1.0
        ratio = xs[idx] / z
        if not np.all(np.isfinite(ratio)):
            raise FloatingPointError("non-finite responsibilities in row batch")
        gamma_new = alpha + w * (ratio @ beta)
        e_new = _expectation_log_theta(gamma_new)
        log_z = np.log(z) + shift
        bounds_new = (
            alpha_const
            + (xs[idx] * log_z).sum(axis=1)
            - ((gamma_new - alpha) * e_act).sum(axis=1)
            - gammaln(gamma_new.sum(axis=1))
            + gammaln(gamma_new).sum(axis=1)
        )
        gammas[idx] = gamma_new
        e[idx] = e_new
        w_fin[idx] = w
        z_fin[idx] = z
        e_fin[idx] = e_new
        done = np.abs(bounds_new - prev[idx]) <= tol * np.abs(prev[idx])
        done &= ~np.isnan(prev[idx])
        prev[idx] = bounds_new
        if done.any():
            active[idx[done]] = False
            if not active.any():
                break
    phis = beta[None, :, :] * w_fin[:, None, :] / z_fin[:, :, None]
    dead = phis.sum(axis=2) == 0.0
    if dead.any():
        phis[dead] = 1.0 / n_topics
    bounds = np.array([
        _direct_bound(xs[b], gammas[b], phis[b], e_fin[b], log_beta, alpha,
                      alpha_const)
        for b in range(n_rows)
    ])
    if not np.all(np.isfinite(bounds)):
        raise FloatingPointError("non-finite bound; zero topic mass at an observed word")
    return gammas, phis, bounds, ~active


class VEResult(NamedTuple):
    """Fixed-point output for one document (or meta-observation)."""

    gamma: np.ndarray       # (K,)
    words: np.ndarray       # nonzero word indices of the document
    phi: np.ndarray         # (len(words), K), rows sum to 1
    bound: float            # the document's contribution to the ELBO
    converged: bool


def ve_step(counts, beta, alpha, gamma_init=None, max_iters: int = 25,
            tol: float = 1e-8) -> VEResult:
    """Variational fixed point for a single document.

    Alternates the responsibility update phi_vk ∝ beta_vk * exp(E[log theta_k])
    with gamma_k = alpha_k + sum_v x_v phi_vk until the document's bound
    contribution changes by less than `tol` relatively, or `max_iters`
    sweeps have run.  The returned gamma satisfies the identity
    gamma - alpha = phi' x exactly for the returned phi.

    Args:
        counts: dense length-V vector of nonnegative integer counts.
        beta: V x K column-stochastic topic matrix.
        alpha: scalar or length-K Dirichlet hyperparameter.
        gamma_init: optional positive warm start (default alpha + L/K).
    """
    x = np.asarray(counts, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64)
    if x.shape[0] != beta.shape[0]:
        raise ValueError("counts length must match vocabulary size")
    if x.sum() <= 0:
        raise ValueError("document has no tokens")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    n_topics = beta.shape[1]
    alpha = as_alpha(alpha, n_topics)
    if gamma_init is None:
        gamma_init = alpha + x.sum() / n_topics
    gamma_init = np.asarray(gamma_init, dtype=np.float64)
    if gamma_init.shape != (n_topics,) or np.any(gamma_init <= 0.0):
        raise ValueError("gamma_init must be positive with one entry per topic")
    gamma, phi, bound, converged = _row_ve(
        x, beta, _log_beta(beta), alpha, gamma_init.copy(), max_iters, tol,
        _alpha_const(alpha),
    )
    words = np.flatnonzero(x)
    return VEResult(gamma, words, phi[words], bound, converged)


class _FlatCorpus(NamedTuple):
    """CSR pieces of a corpus, precomputed for the batched sweeps."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray       # float64 copy of the counts
    doc_of: np.ndarray     # document index of every stored entry
    lengths: np.ndarray    # per-document token totals


def _flatten(csr: sparse.csr_matrix) -> _FlatCorpus:
    lengths = np.asarray(csr.sum(axis=1), dtype=np.float64).ravel()
    doc_of = np.repeat(np.arange(csr.shape[0]), np.diff(csr.indptr))
    return _FlatCorpus(csr.indptr, csr.indices, csr.data.astype(np.float64),
                       doc_of, lengths)


def _sweep(flat: _FlatCorpus, beta, alpha, gamma, ve_iters, ve_tol):
    """One VE pass over all documents, warm-started at `gamma`.

    Every document runs its own fixed point (as in `ve_step`) until its
    bound contribution stabilizes; converged documents are frozen while
    the rest continue.  Returns (gamma, phi, bounds, converged) with phi
    flat over the stored entries of the corpus.
    """
    n_docs = len(flat.indptr) - 1
    n_topics = beta.shape[1]
    alpha_const = _alpha_const(alpha)
    beta_rows = beta[flat.indices]
    phi = np.empty((len(flat.indices), n_topics))
    bounds = np.full(n_docs, -np.inf)
    prev = np.full(n_docs, np.nan)
    active = np.ones(n_docs, dtype=bool)
    compress = np.empty(n_docs, dtype=np.int64)
    e = _expectation_log_theta(gamma)
    for _ in range(ve_iters):
        sel = active[flat.doc_of]
        d = flat.doc_of[sel]
        xv = flat.data[sel]
        starts = np.flatnonzero(np.r_[True, d[1:] != d[:-1]])
        docs_here = d[starts]
        compress[docs_here] = np.arange(len(docs_here))

        e_act = e[docs_here]
        shift = e_act.max(axis=1)
        w = np.exp(e_act - shift[:, None])
        g = beta_rows[sel] * w[compress[d]]
        z = g.sum(axis=1)
        if np.any(z == 0.0):
            raise FloatingPointError(
                f"non-finite responsibilities at word index "
                f"{int(flat.indices[sel][np.flatnonzero(z == 0.0)[0]])}"
            )
        ph = g / z[:, None]
        gamma_new = alpha + np.add.reduceat((xv / z)[:, None] * g, starts, axis=0)
        if not np.all(np.isfinite(gamma_new)):
            raise FloatingPointError("non-finite responsibilities in sweep")
        e_new = _expectation_log_theta(gamma_new)
        log_z = np.log(z) + shift[compress[d]]
        b_new = (
            alpha_const
            + np.add.reduceat(xv * log_z, starts)
            - ((gamma_new - alpha) * e_act).sum(axis=1)
            - gammaln(gamma_new.sum(axis=1))
            + gammaln(gamma_new).sum(axis=1)
        )
        gamma[docs_here] = gamma_new
        e[docs_here] = e_new
        phi[sel] = ph
        bounds[docs_here] = b_new
        done = np.abs(b_new - prev[docs_here]) <= ve_tol * np.abs(prev[docs_here])
        done &= ~np.isnan(prev[docs_here])
        prev[docs_here] = b_new
        if done.any():
            active[docs_here[done]] = False
            if not active.any():
                break
    if not np.all(np.isfinite(bounds)):
        raise FloatingPointError("non-finite bound; zero topic mass at an observed word")
    return gamma, phi, bounds, ~active


def elbo_lda(corpus, gamma, phi, beta, alpha) -> float:
    """Evidence lower bound of an LDA variational state, summed over documents.

    Pure function of its inputs.  `phi` is flat over the stored entries
    of the corpus (one row of K responsibilities per (document, word)
    pair, in CSR order); `gamma` is D x K.
    """
    csr = _as_csr(corpus)
    n_docs = csr.shape[0]
    gamma = np.asarray(gamma, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    n_topics = gamma.shape[1] if gamma.ndim == 2 else 0
    alpha = as_alpha(alpha, n_topics)
    if gamma.shape != (n_docs, n_topics) or phi.shape != (csr.nnz, n_topics):
        raise ValueError("gamma/phi shapes inconsistent with the corpus")
    doc_of = np.repeat(np.arange(n_docs), np.diff(csr.indptr))
    e_log_theta = _expectation_log_theta(gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_phi = np.log(phi)
        terms = np.where(
            phi > 0.0,
            phi * (e_log_theta[doc_of] + _log_beta(beta)[csr.indices] - log_phi),
            0.0,
        )
    per_doc = (
        _alpha_const(alpha)
        + ((alpha - gamma) * e_log_theta).sum(axis=1)
        - gammaln(gamma.sum(axis=1))
        + gammaln(gamma).sum(axis=1)
    )
    total = per_doc.sum() + (csr.data * terms.sum(axis=1)).sum()
    if not np.isfinite(total):
        raise FloatingPointError("non-finite bound; zero topic mass at an observed word")
    return float(total)


def m_step_beta(corpus, phi, delta: float = SMOOTHING_DELTA) -> np.ndarray:
    """Maximize the bound over the topic matrix: beta_vk ∝ sum_d x_dv phi_dvk.

    Every cell receives the pseudocount `delta` before the columns are
    normalized, so all entries stay strictly positive.
    """
    csr = _as_csr(corpus)
    phi = np.asarray(phi, dtype=np.float64)
    n_words = csr.shape[1]
    n_topics = phi.shape[1]
    weights = csr.data.astype(np.float64)
    acc = np.empty((n_words, n_topics))
    for k in range(n_topics):
        acc[:, k] = np.bincount(csr.indices, weights=weights * phi[:, k],
                                minlength=n_words)
    if np.any(acc.sum(axis=0) == 0.0):
        warnings.warn("topic with zero total responsibility; its column "
                      "smooths to uniform", RuntimeWarning)
    acc += delta
    return acc / acc.sum(axis=0, keepdims=True)


@dataclass
class LdaConfig:
    """Knobs for the variational EM driver."""

    max_em_iters: int = 100
    em_tol: float = 1e-6
    ve_iters: int = 25
    ve_tol: float = 1e-8
    seed: int = 0
    restarts: int = 5
    smoothing: float = SMOOTHING_DELTA


@dataclass
class LdaFit:
    """Converged variational state for one corpus.

    `phi` is flat over the stored corpus entries; `responsibilities(d)`
    recovers the per-document sparse view.
    """

    beta: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    bound: float
    trace: list[float]
    indptr: np.ndarray
    indices: np.ndarray

    def responsibilities(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Word indices and responsibility rows of document d."""
        lo, hi = self.indptr[d], self.indptr[d + 1]
        return self.indices[lo:hi], self.phi[lo:hi]


def fit_lda(corpus, n_topics: int, alpha=1.0, config: LdaConfig | None = None) -> LdaFit:
    """Variational EM with random restarts; returns the highest-bound fit.

    Each restart draws a random column-stochastic beta, then alternates
    full VE sweeps with the beta M-step until the bound's relative change
    drops below `em_tol`.  Deterministic for a fixed seed.
    """
    cfg = config or LdaConfig()
    csr = _as_csr(corpus)
    n_docs, n_words = csr.shape
    if n_topics < 1:
        raise ValueError("need at least one topic")
    alpha = as_alpha(alpha, n_topics)
    flat = _flatten(csr)
    total_tokens = flat.lengths.sum()
    if n_topics > total_tokens:
        raise ValueError(
            f"{n_topics} topics exceed the {int(total_tokens)} observed tokens"
        )
    best: LdaFit | None = None
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.restarts):
        rng = np.random.default_rng(child)
        beta = smooth_topics(rng.gamma(1.0, size=(n_words, n_topics)), cfg.smoothing)
        gamma = alpha + flat.lengths[:, None] / n_topics
        trace: list[float] = []
        for _ in range(cfg.max_em_iters):
            gamma, phi, _, _ = _sweep(flat, beta, alpha, gamma,
                                      cfg.ve_iters, cfg.ve_tol)
            beta = m_step_beta(csr, phi, delta=cfg.smoothing)
            trace.append(elbo_lda(csr, gamma, phi, beta, alpha))
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.em_tol * abs(trace[-2]):
                break
        fit = LdaFit(beta, gamma, phi, trace[-1], trace,
                     csr.indptr.copy(), csr.indices.copy())
        if best is None or fit.bound > best.bound:
            best = fit
    return best
