"""Sparse count-data ingestion and cluster-level aggregation.

Observations are rows of a sparse N x V matrix of nonnegative integer
counts (documents x vocabulary in the bag-of-words reading).  Hard
cluster assignments collapse the corpus into Q *meta-observations*, the
element-wise sums of the rows assigned to each cluster; all downstream
inference operates on those aggregates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

MM_HEADER = "%%MatrixMarket matrix coordinate integer general"


class LoadError(ValueError):
    """Raised when an input file violates the expected format."""


@dataclass(frozen=True)
class Vocabulary:
    """Word strings indexing the columns of a count matrix."""

    terms: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")

    def __len__(self) -> int:
        return len(self.terms)


@dataclass
class CountMatrix:
    """Sparse N x V matrix of strictly positive integer counts.

    Attributes:
        counts: CSR matrix, int64; explicit zeros are never stored.
        doc_lengths: per-row token totals L_i (all >= 1).
        vocab: optional word strings, aligned with the columns.
        column_map: original column index of each retained column when
            all-zero columns were pruned at load time, else None.
    """

    counts: sparse.csr_matrix
    doc_lengths: np.ndarray
    vocab: Vocabulary | None = None
    column_map: np.ndarray | None = None

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def n_words(self) -> int:
        return self.counts.shape[1]

    @property
    def total_tokens(self) -> int:
        return int(self.doc_lengths.sum())

    def doc(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (word indices, counts) of row i."""
        start, end = self.counts.indptr[i], self.counts.indptr[i + 1]
        return self.counts.indices[start:end], self.counts.data[start:end]

    def doc_dense(self, i: int) -> np.ndarray:
        """Return row i as a dense length-V vector."""
        row = np.zeros(self.n_words, dtype=np.int64)
        words, vals = self.doc(i)
        row[words] = vals
        return row

    def validate(self) -> None:
        """Check the representation invariants, raising ValueError on breach."""
        c = self.counts
        if c.dtype.kind not in "iu":
            raise ValueError("counts must be integer typed")
        if c.nnz and c.data.min() <= 0:
            raise ValueError("stored counts must be strictly positive")
        lengths = np.asarray(c.sum(axis=1)).ravel()
        if not np.array_equal(lengths, self.doc_lengths):
            raise ValueError("doc_lengths inconsistent with row sums")
        if self.n_docs == 0 or self.doc_lengths.min() < 1:
            raise ValueError("every document needs at least one token")
        col_sums = np.asarray(c.sum(axis=0)).ravel()
        if self.n_words == 0 or col_sums.min() < 1:
            raise ValueError("all-zero vocabulary columns are not allowed")
        if self.vocab is not None and len(self.vocab) != self.n_words:
            raise ValueError("vocabulary length does not match column count")

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return (
            self.counts.shape == other.counts.shape
            and (self.counts != other.counts).nnz == 0
            and self.vocab == other.vocab
        )


def from_entries(
    n_docs: int,
    n_words: int,
    docs: np.ndarray,
    words: np.ndarray,
    values: np.ndarray,
    vocab: Vocabulary | None = None,
) -> CountMatrix:
    """Build a CountMatrix from 0-based coordinate triplets.

    Duplicate coordinates are summed.  All-zero columns are pruned with a
    logged index remap; documents without any count are rejected.
    """
    if len(docs) == 0:
        raise LoadError("no observations")
    coo = sparse.coo_matrix(
        (np.asarray(values, dtype=np.int64), (docs, words)),
        shape=(n_docs, n_words),
    )
    csr = coo.tocsr()  # sums duplicate coordinates
    csr.eliminate_zeros()

    col_sums = np.asarray(csr.sum(axis=0)).ravel()
    keep = np.flatnonzero(col_sums > 0)
    column_map = None
    if len(keep) < n_words:
        column_map = keep.astype(np.int64)
        dropped = np.setdiff1d(np.arange(n_words), keep)
        csr = csr[:, keep]
        if vocab is not None:
            vocab = Vocabulary(tuple(vocab.terms[j] for j in keep))
        log.info(
            "pruned %d all-zero columns of %d (original indices %s); "
            "column_map records the remap",
            len(dropped), n_words, dropped.tolist(),
        )
    if csr.shape[1] == 0:
        raise LoadError("no observations")

    doc_lengths = np.asarray(csr.sum(axis=1)).ravel()
    empty = np.flatnonzero(doc_lengths == 0)
    if len(empty):
        raise LoadError(f"document {empty[0]} has no counts")
    m = CountMatrix(csr, doc_lengths, vocab=vocab, column_map=column_map)
    m.validate()
    return m


def from_dense(dense, vocab: Vocabulary | None = None) -> CountMatrix:
    """Build a CountMatrix from a dense array-like of counts."""
    arr = np.asarray(dense, dtype=np.int64)
    docs, words = np.nonzero(arr)
    return from_entries(arr.shape[0], arr.shape[1], docs, words, arr[docs, words], vocab)


def load_matrix_market(path) -> CountMatrix:
    """Read a MatrixMarket `coordinate integer general` file (1-based indices)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip().lower() != MM_HEADER.lower():
        raise LoadError(f"line 1: expected header '{MM_HEADER}'")

    body = [
        (no, ln) for no, ln in enumerate(lines[1:], start=2)
        if ln.strip() and not ln.lstrip().startswith("%")
    ]
    if not body:
        raise LoadError("line 1: missing size line")
    size_no, size_ln = body[0]
    parts = size_ln.split()
    if len(parts) != 3:
        raise LoadError(f"line {size_no}: size line needs 'rows cols nnz'")
    try:
        n_docs, n_words, nnz = (int(p) for p in parts)
    except ValueError:
        raise LoadError(f"line {size_no}: non-integer size entry") from None
    if n_docs < 1 or n_words < 1:
        raise LoadError(f"line {size_no}: dimensions must be positive")

    docs, words, values = [], [], []
    for no, ln in body[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise LoadError(f"line {no}: expected 'row col value'")
        try:
            i, v, x = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise LoadError(f"line {no}: non-integer value") from None
        if x < 0:
            raise LoadError(f"line {no}: negative count")
        if not (1 <= i <= n_docs and 1 <= v <= n_words):
            raise LoadError(f"line {no}: index out of range")
        docs.append(i - 1)
        words.append(v - 1)
        values.append(x)
    if len(docs) != nnz:
        log.warning("entry count %d differs from declared nnz %d", len(docs), nnz)
    if not docs:
        raise LoadError("no observations")
    return from_entries(
        n_docs, n_words,
        np.array(docs), np.array(words), np.array(values),
    )


def save_matrix_market(x: CountMatrix, path) -> None:
    """Write counts as MatrixMarket `coordinate integer general` (1-based)."""
    coo = x.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{x.n_docs} {x.n_words} {coo.nnz}\n")
        for i, v, c in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i + 1} {v + 1} {c}\n")


def load_triplets_csv(path) -> CountMatrix:
    """Read CSV triplets with header `doc,word,count` (0-based doc ids).

    The word column holds either 0-based integer ids or word strings; a
    string column builds the Vocabulary in first-appearance order.
    Mixing the two in one file is an error.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("line 1: empty file") from None
        if [h.strip().lower() for h in header] != ["doc", "word", "count"]:
            raise LoadError("line 1: expected header 'doc,word,count'")
        rows = [(no, row) for no, row in enumerate(reader, start=2) if row]

    if not rows:
        raise LoadError("no observations")

    def _is_int(s: str) -> bool:
        s = s.strip()
        return s.lstrip("+-").isdigit()

    word_is_int = _is_int(rows[0][1][1])
    docs, words, values = [], [], []
    term_ids: dict[str, int] = {}
    for no, row in rows:
        if len(row) != 3:
            raise LoadError(f"line {no}: expected 3 columns")
        d_s, w_s, c_s = (s.strip() for s in row)
        if not _is_int(d_s) or not _is_int(c_s):
            raise LoadError(f"line {no}: non-integer doc or count")
        d, c = int(d_s), int(c_s)
        if d < 0:
            raise LoadError(f"line {no}: negative doc index")
        if c < 0:
            raise LoadError(f"line {no}: negative count")
        if _is_int(w_s) != word_is_int:
            raise LoadError(f"line {no}: mixed integer and string word ids")
        if word_is_int:
            w = int(w_s)
            if w < 0:
                raise LoadError(f"line {no}: negative word index")
        else:
            w = term_ids.setdefault(w_s, len(term_ids))
        docs.append(d)
        words.append(w)
        values.append(c)

    vocab = None if word_is_int else Vocabulary(tuple(term_ids))
    n_docs = max(docs) + 1
    n_words = (max(words) + 1) if word_is_int else len(term_ids)
    return from_entries(
        n_docs, n_words,
        np.array(docs), np.array(words), np.array(values), vocab,
    )


def save_triplets_csv(x: CountMatrix, path) -> None:
    """Write counts as `doc,word,count` triplets (words as strings if known)."""
    coo = x.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc", "word", "count"])
        for i, v, c in zip(coo.row[order], coo.col[order], coo.data[order]):
            w = x.vocab.terms[v] if x.vocab is not None else v
            writer.writerow([i, w, c])


def load_labels_csv(path) -> np.ndarray:
    """Read a labels CSV with header `doc,cluster` (0-based), ordered by doc."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("line 1: empty file") from None
        if [h.strip().lower() for h in header] != ["doc", "cluster"]:
            raise LoadError("line 1: expected header 'doc,cluster'")
        pairs = {}
        for no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d, c = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise LoadError(f"line {no}: expected integer 'doc,cluster'") from None
            if c < 0:
                raise LoadError(f"line {no}: negative cluster label")
            pairs[d] = c
    if not pairs:
        raise LoadError("no observations")
    if sorted(pairs) != list(range(len(pairs))):
        raise LoadError("doc indices must cover 0..N-1")
    return np.array([pairs[d] for d in range(len(pairs))], dtype=np.int64)


def save_labels_csv(labels: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc", "cluster"])
        for d, c in enumerate(np.asarray(labels, dtype=np.int64)):
            writer.writerow([d, int(c)])


@dataclass
class Partition:
    """Hard assignment of N observations to clusters 0..n_clusters-1."""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be a flat vector")
        if self.n_clusters < 1:
            raise ValueError("need at least one cluster")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.n_clusters
        ):
            raise ValueError("labels out of range")

    @property
    def n_docs(self) -> int:
        return len(self.labels)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters).astype(np.int64)


@dataclass
class MetaCorpus:
    """Q x V aggregated counts, one meta-observation per cluster."""

    counts: np.ndarray          # (Q, V) int64
    cluster_sizes: np.ndarray   # (Q,) int64

    @property
    def n_clusters(self) -> int:
        return self.counts.shape[0]

    @property
    def n_words(self) -> int:
        return self.counts.shape[1]

    def to_count_matrix(self) -> CountMatrix:
        """View the meta-observations themselves as a corpus of Q documents."""
        csr = sparse.csr_matrix(self.counts.astype(np.int64))
        return CountMatrix(csr, self.counts.sum(axis=1).astype(np.int64))


def aggregate(x: CountMatrix, y: Partition) -> MetaCorpus:
    """Sum the rows of each cluster into its meta-observation.

    Exact integer arithmetic: counts[q, v] = sum_i 1{y_i = q} * x_iv.
    """
    if y.n_docs != x.n_docs:
        raise ValueError(
            f"partition length {y.n_docs} does not match corpus size {x.n_docs}"
        )
    q = y.n_clusters
    onehot = sparse.csr_matrix(
        (np.ones(x.n_docs, dtype=np.int64), (y.labels, np.arange(x.n_docs))),
        shape=(q, x.n_docs),
    )
    counts = np.asarray((onehot @ x.counts).todense(), dtype=np.int64)
    return MetaCorpus(counts, y.sizes())
