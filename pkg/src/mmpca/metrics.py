"""Partition agreement metrics: Adjusted Rand Index and confusion tables."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


def _contingency(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    la, ia = np.unique(a, return_inverse=True)
    lb, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(la), len(lb)), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, la, lb


def _comb2(n) -> int:
    n = int(n)
    return n * (n - 1) // 2


def ari(a, b) -> float:
    """Adjusted Rand Index between two labelings, in [-1, 1].

    Computed from the contingency table with exact integer/rational
    arithmetic, so the result is bit-identical to pair counting.
    Symmetric and invariant to label permutation on either side.  When
    the adjustment denominator vanishes (both partitions trivial), the
    conventional value is 1.0 for identical pair relations and 0.0
    otherwise.
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label lengths differ: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two observations")
    table, _, _ = _contingency(a, b)
    sum_cells = sum(_comb2(v) for v in table.ravel())
    sum_rows = sum(_comb2(v) for v in table.sum(axis=1))
    sum_cols = sum(_comb2(v) for v in table.sum(axis=0))
    expected = Fraction(sum_rows * sum_cols, _comb2(n))
    maximum = Fraction(sum_rows + sum_cols, 2)
    if maximum == expected:
        same_relations = (
            np.all((table > 0).sum(axis=0) <= 1)
            and np.all((table > 0).sum(axis=1) <= 1)
        )
        return 1.0 if same_relations else 0.0
    return float((sum_cells - expected) / (maximum - expected))


@dataclass
class ConfusionMatrix:
    """Co-occurrence counts between two labelings; entries sum to N."""

    table: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray


def confusion(a, b) -> ConfusionMatrix:
    """table[p][q] = #{i : a_i = p-th label of a, b_i = q-th label of b}."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label lengths differ: {len(a)} vs {len(b)}")
    table, la, lb = _contingency(a, b)
    return ConfusionMatrix(table, la, lb)
