"""Synthetic corpus generation for clustering benchmarks.

Documents are drawn from a mixture of multinomial PCA: each document
gets a cluster, each token draws a topic from the cluster's topic
mixture (optionally corrupted toward uniform by a noise level) and then
a word from that topic's distribution.  Topics are disjoint-block
distributions with within-block Zipf weights, a deterministic stand-in
for corpus-derived topics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CountMatrix, Partition, from_dense

DEFAULT_THETA_ROWS = (
    (0.50, 0.17, 0.17, 0.17),
    (0.17, 0.50, 0.17, 0.17),
    (0.17, 0.17, 0.50, 0.17),
    (0.17, 0.17, 0.17, 0.50),
    (0.33, 0.17, 0.33, 0.17),
    (0.17, 0.33, 0.17, 0.33),
)


def default_theta_star() -> np.ndarray:
    """Six reference cluster-over-topic mixtures: four peaked, two mixed.

    Rows are renormalized to sum exactly to 1 (the first four rows of the
    raw table sum to 1.01).
    """
    theta = np.array(DEFAULT_THETA_ROWS, dtype=np.float64)
    return theta / theta.sum(axis=1, keepdims=True)


def block_beta(n_words: int = 900, n_topics: int = 4,
               zipf_exponent: float = 1.0, seed: int = 0) -> np.ndarray:
    """Disjoint-block topics with Zipf weights inside each block.

    Words are split into n_topics blocks (floor(V/K) words each, the
    remainder joining the last block); topic k puts all of its mass on
    block k, with the r-th word of the block weighted r**-zipf_exponent.
    The seed permutes the word-to-block assignment.
    """
    if n_words < n_topics:
        raise ValueError(f"{n_words} words cannot fill {n_topics} blocks")
    perm = np.random.default_rng(seed).permutation(n_words)
    base = n_words // n_topics
    beta = np.zeros((n_words, n_topics))
    offset = 0
    for k in range(n_topics):
        size = base if k < n_topics - 1 else n_words - offset
        ranks = np.arange(1, size + 1, dtype=np.float64)
        weights = ranks ** (-zipf_exponent)
        beta[perm[offset:offset + size], k] = weights / weights.sum()
        offset += size
    return beta


def cluster_proportions(imbalance: float, n_clusters: int) -> np.ndarray:
    """Geometric mixture weights pi_q ∝ imbalance**(Q-q); 1 gives uniform."""
    if not (0.0 < imbalance <= 1.0):
        raise ValueError("imbalance must lie in (0, 1]")
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    weights = imbalance ** np.arange(n_clusters - 1, -1, -1, dtype=np.float64)
    return weights / weights.sum()


@dataclass
class SimulationConfig:
    """Generative setting: corpus shape, mixtures, noise and imbalance."""

    n_docs: int = 400
    doc_length: int = 250
    q_star: int = 6
    k_star: int = 4
    n_words: int = 900
    epsilon: float = 0.0           # per-token probability of a uniform topic
    imbalance: float = 1.0         # geometric cluster-proportion parameter
    zipf_exponent: float = 1.0
    topic_seed: int = 0            # block assignment seed, fixed across replicates
    seed: int = 0
    theta_star: np.ndarray | None = None
    beta_star: np.ndarray | None = None

    def resolved_theta(self) -> np.ndarray:
        if self.theta_star is not None:
            theta = np.asarray(self.theta_star, dtype=np.float64)
        elif (self.q_star, self.k_star) == (6, 4):
            theta = default_theta_star()
        else:
            raise ValueError(
                "theta_star must be given unless (q_star, k_star) == (6, 4)"
            )
        if theta.shape != (self.q_star, self.k_star):
            raise ValueError(f"theta_star must be {self.q_star} x {self.k_star}")
        if np.max(np.abs(theta.sum(axis=1) - 1.0)) > 1e-12 or np.any(theta < 0):
            raise ValueError("theta_star rows must be distributions")
        return theta

    def resolved_beta(self) -> np.ndarray:
        if self.beta_star is None:
            return block_beta(self.n_words, self.k_star,
                              self.zipf_exponent, self.topic_seed)
        beta = np.asarray(self.beta_star, dtype=np.float64)
        if beta.shape != (self.n_words, self.k_star):
            raise ValueError(f"beta_star must be {self.n_words} x {self.k_star}")
        if np.max(np.abs(beta.sum(axis=0) - 1.0)) > 1e-12 or np.any(beta < 0):
            raise ValueError("beta_star columns must be distributions")
        return beta

    def validate(self) -> None:
        if self.n_docs < 1 or self.doc_length < 1:
            raise ValueError("need at least one document and one token")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        cluster_proportions(self.imbalance, self.q_star)
        self.resolved_theta()
        self.resolved_beta()


@dataclass
class LabeledCorpus:
    """A simulated corpus with its generating labels and configuration."""

    counts: CountMatrix
    labels: Partition
    config: SimulationConfig


def sample_document(rng: np.random.Generator, topic_mixture: np.ndarray,
                    beta: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw an ordered token sequence: (topics, words), i.i.d. given the mixture."""
    n_topics = beta.shape[1]
    topics = rng.choice(n_topics, size=length, p=topic_mixture)
    words = np.empty(length, dtype=np.int64)
    for k in np.unique(topics):
        mask = topics == k
        words[mask] = rng.choice(beta.shape[0], size=int(mask.sum()), p=beta[:, k])
    return topics, words


def generate(config: SimulationConfig) -> LabeledCorpus:
    """Simulate a corpus; deterministic per seed.

    One RNG substream per document (spawned from the config seed) makes
    the draw order reproducible and document generation parallelizable.
    Every document has exactly `doc_length` tokens.  Per token, the topic
    comes from (1 - epsilon) * theta_row + epsilon * uniform, which is the
    exact marginal of corrupting the topic draw with probability epsilon.
    """
    config.validate()
    theta = config.resolved_theta()
    beta = config.resolved_beta()
    pi = cluster_proportions(config.imbalance, config.q_star)
    mixtures = (1.0 - config.epsilon) * theta + config.epsilon / config.k_star

    label_seq, *doc_seqs = np.random.SeedSequence(config.seed).spawn(config.n_docs + 1)
    labels = np.random.default_rng(label_seq).choice(
        config.q_star, size=config.n_docs, p=pi
    )
    dense = np.zeros((config.n_docs, config.n_words), dtype=np.int64)
    for i, child in enumerate(doc_seqs):
        rng = np.random.default_rng(child)
        _, words = sample_document(rng, mixtures[labels[i]], beta, config.doc_length)
        dense[i] = np.bincount(words, minlength=config.n_words)
    counts = from_dense(dense)
    return LabeledCorpus(counts, Partition(labels, config.q_star), config)
