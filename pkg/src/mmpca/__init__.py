"""Clustering of high-dimensional count data with the mixture of multinomial PCA.

The package couples topic-model dimension reduction with hard mixture
clustering: variational inference runs on cluster-level aggregates of the
observations while a greedy swap search maximizes a classification lower
bound, and an ICL criterion selects the number of clusters and topics.
"""

__version__ = "0.1.0"

from .corpus import (
    CountMatrix,
    LoadError,
    MetaCorpus,
    Partition,
    Vocabulary,
    aggregate,
    from_dense,
    load_labels_csv,
    load_matrix_market,
    load_triplets_csv,
    save_labels_csv,
    save_matrix_market,
    save_triplets_csv,
)
from .lda import (
    LdaConfig,
    LdaFit,
    digamma,
    elbo_lda,
    fit_lda,
    m_step_beta,
    smooth_topics,
    ve_step,
)
from .metrics import ConfusionMatrix, ari, confusion
from .model import (
    FitConfig,
    FitResult,
    MmpcaState,
    SwapDelta,
    build_state,
    clustering_term,
    estimate_pi,
    evaluate_swap,
    fit,
    full_bound,
    greedy_epoch,
    init_partition,
)
from .selection import GridResult, ModelScore, grid_search, icl
from .simulate import (
    LabeledCorpus,
    SimulationConfig,
    block_beta,
    cluster_proportions,
    default_theta_star,
    generate,
    sample_document,
)

__all__ = [
    "CountMatrix", "LoadError", "MetaCorpus", "Partition", "Vocabulary",
    "aggregate", "from_dense", "load_labels_csv", "load_matrix_market",
    "load_triplets_csv", "save_labels_csv", "save_matrix_market",
    "save_triplets_csv",
    "LdaConfig", "LdaFit", "digamma", "elbo_lda", "fit_lda", "m_step_beta",
    "smooth_topics", "ve_step",
    "ConfusionMatrix", "ari", "confusion",
    "FitConfig", "FitResult", "MmpcaState", "SwapDelta", "build_state",
    "clustering_term", "estimate_pi", "evaluate_swap", "fit", "full_bound",
    "greedy_epoch", "init_partition",
    "GridResult", "ModelScore", "grid_search", "icl",
    "LabeledCorpus", "SimulationConfig", "block_beta", "cluster_proportions",
    "default_theta_star", "generate", "sample_document",
    "__version__",
]
