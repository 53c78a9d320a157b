import numpy as np
import pytest

from mmpca import CountMatrix, from_dense


def random_corpus(rng, n_docs, n_words, density=0.4, max_count=6) -> CountMatrix:
    """Small random corpus with no empty rows or columns."""
    dense = rng.integers(1, max_count + 1, size=(n_docs, n_words))
    dense *= rng.random((n_docs, n_words)) < density
    dense[np.arange(n_docs), rng.integers(0, n_words, size=n_docs)] += 1
    dense[rng.integers(0, n_docs, size=n_words), np.arange(n_words)] += 1
    return from_dense(dense)


def random_beta(rng, n_words, n_topics) -> np.ndarray:
    beta = rng.gamma(1.0, size=(n_words, n_topics)) + 1e-6
    return beta / beta.sum(axis=0, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
