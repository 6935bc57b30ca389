"""Containers for document-token counts, document attributes and vocabularies.

Counts are held column-major (one column per token) because every
per-token regression reads exactly one column.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DuplicateCell,
    NonPositiveCount,
    OutOfRangeIndex,
    ShapeMismatch,
    ZeroVarianceColumn,
)

TARGET = "target"
CONTROL = "control"


class ZeroTokenWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class SparseCounts:
    """An ``n_docs x n_tokens`` matrix of nonnegative integer counts.

    Zeros are never stored. ``doc_totals[i]`` is the row sum m_i and
    ``grand_total`` is M, the sum of all counts.
    """

    matrix: sp.csc_matrix
    doc_totals: np.ndarray
    grand_total: int

    @property
    def n_docs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def is_empty(self) -> bool:
        return self.grand_total == 0

    @property
    def token_totals(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0), dtype=np.int64).ravel()

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (doc indices, counts) of the stored entries of token ``j``."""
        lo, hi = self.matrix.indptr[j], self.matrix.indptr[j + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def dense_column(self, j: int) -> np.ndarray:
        out = np.zeros(self.n_docs, dtype=np.float64)
        rows, vals = self.column(j)
        out[rows] = vals
        return out

    def triplets(self) -> list[tuple[int, int, int]]:
        """Stored entries as (doc, token, count), token-major then doc order."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return [
            (int(coo.row[k]), int(coo.col[k]), int(coo.data[k])) for k in order
        ]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseCounts):
            return NotImplemented
        a, b = self.matrix, other.matrix
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.doc_totals, other.doc_totals)
            and self.grand_total == other.grand_total
        )

    __hash__ = None  # type: ignore[assignment]


def build_counts(
    triplets: Iterable[tuple[int, int, int]], n_docs: int, n_tokens: int
) -> SparseCounts:
    """Validate (doc, token, count) triplets and assemble a SparseCounts.

    Raises DuplicateCell, OutOfRangeIndex or NonPositiveCount. Tokens that
    never occur are kept in place (indices stay stable) but trigger a
    ZeroTokenWarning since they have no finite intercept MLE.
    """
    arr = np.asarray(list(triplets), dtype=np.int64).reshape(-1, 3)
    rows, cols, vals = arr[:, 0], arr[:, 1], arr[:, 2]
    if n_docs < 0 or n_tokens < 0:
        raise OutOfRangeIndex("n_docs and n_tokens must be nonnegative")
    bad = (rows < 0) | (rows >= n_docs) | (cols < 0) | (cols >= n_tokens)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise OutOfRangeIndex(
            f"triplet ({rows[k]}, {cols[k]}, {vals[k]}) outside "
            f"{n_docs} docs x {n_tokens} tokens"
        )
    if (vals <= 0).any():
        k = int(np.flatnonzero(vals <= 0)[0])
        raise NonPositiveCount(f"count {vals[k]} at (doc {rows[k]}, token {cols[k]})")
    return _from_coo(rows, cols, vals, n_docs, n_tokens)


def _from_coo(rows, cols, vals, n_docs, n_tokens) -> SparseCounts:
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows) > 1:
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise DuplicateCell(f"(doc {rows[k]}, token {cols[k]}) given twice")
    indptr = np.zeros(n_tokens + 1, dtype=np.int64)
    np.add.at(indptr, cols + 1, 1)
    indptr = np.cumsum(indptr)
    mat = sp.csc_matrix(
        (vals.astype(np.int64), rows.astype(np.int32), indptr),
        shape=(n_docs, n_tokens),
    )
    doc_totals = np.bincount(rows, weights=vals, minlength=n_docs).astype(np.int64)
    tok_totals = np.bincount(cols, weights=vals, minlength=n_tokens)
    if n_tokens and (tok_totals == 0).any():
        warnings.warn(
            f"{int((tok_totals == 0).sum())} token(s) have zero total count "
            "and will be dropped from fitting",
            ZeroTokenWarning,
            stacklevel=3,
        )
    return SparseCounts(mat, doc_totals, int(doc_totals.sum()))


def counts_from_matrix(dense_or_sparse) -> SparseCounts:
    """Build from any 2-D integer array or scipy sparse matrix."""
    coo = sp.coo_matrix(dense_or_sparse)
    coo.sum_duplicates()
    keep = coo.data != 0
    rows = coo.row[keep].astype(np.int64)
    cols = coo.col[keep].astype(np.int64)
    vals = np.asarray(coo.data[keep])
    if (vals < 0).any() or not np.all(vals == np.round(vals)):
        raise NonPositiveCount("counts must be nonnegative integers")
    return _from_coo(rows, cols, vals.astype(np.int64), *coo.shape)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    min_doc_count: int = 0

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise DuplicateCell("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self) -> dict[str, int]:
        return {t: j for j, t in enumerate(self.tokens)}


@dataclass(frozen=True, eq=False)
class TokenShard:
    """All stored counts for a subset of tokens.

    ``matrix`` has one column per entry of ``token_indices`` (same order).
    """

    shard_id: int
    token_indices: np.ndarray
    matrix: sp.csc_matrix

    def column(self, local: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.matrix.indptr[local], self.matrix.indptr[local + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]


def _hash_token(j: np.ndarray) -> np.ndarray:
    # Knuth multiplicative hash; stable across processes and runs.
    return (j.astype(np.uint64) * np.uint64(2654435761)) % np.uint64(2**32)


def shard_assignment(n_tokens: int, n_shards: int, policy: str = "contiguous") -> list[np.ndarray]:
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    idx = np.arange(n_tokens, dtype=np.int64)
    if policy == "contiguous":
        return [a.astype(np.int64) for a in np.array_split(idx, n_shards)]
    if policy == "hashed":
        h = _hash_token(idx) % np.uint64(n_shards)
        return [idx[h == s] for s in range(n_shards)]
    raise ValueError(f"unknown shard policy {policy!r}")


def shard_by_token(
    counts: SparseCounts, n_shards: int, policy: str = "contiguous"
) -> list[TokenShard]:
    """Partition tokens into disjoint shards, each holding every count of its tokens."""
    return [
        TokenShard(s, toks, counts.matrix[:, toks].tocsc())
        for s, toks in enumerate(shard_assignment(counts.n_tokens, n_shards, policy))
    ]


def merge_shards(shards: Sequence[TokenShard], n_docs: int, n_tokens: int) -> SparseCounts:
    rows, cols, vals = [], [], []
    for sh in shards:
        coo = sh.matrix.tocoo()
        rows.append(coo.row.astype(np.int64))
        cols.append(sh.token_indices[coo.col])
        vals.append(coo.data.astype(np.int64))
    if not rows:
        rows = cols = vals = [np.zeros(0, dtype=np.int64)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroTokenWarning)
        return _from_coo(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n_docs, n_tokens
        )


@dataclass(frozen=True, eq=False)
class AttributeTable:
    """Dense ``n_docs x p`` covariates with a target/control partition.

    ``scaling[k]`` is the (mean, sd) that was removed from column k, or
    (0.0, 1.0) for a column left on its raw scale.
    """

    names: tuple[str, ...]
    values: np.ndarray
    partition: tuple[str, ...]
    scaling: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ShapeMismatch("attribute values must be 2-D")
        object.__setattr__(self, "values", vals)
        p = vals.shape[1]
        if p < 1:
            raise ShapeMismatch("need at least one attribute column")
        if len(self.names) != p or len(set(self.names)) != p:
            raise ShapeMismatch("need one unique name per attribute column")
        if len(self.partition) != p or not set(self.partition) <= {TARGET, CONTROL}:
            raise ShapeMismatch("partition must tag every column target or control")
        if not self.scaling:
            object.__setattr__(self, "scaling", tuple((0.0, 1.0) for _ in range(p)))
        if len(self.scaling) != p:
            raise ShapeMismatch("scaling needs one (mean, sd) per column")
        if not np.isfinite(vals).all():
            raise ShapeMismatch("attribute values must be finite")

    @classmethod
    def from_columns(
        cls,
        columns: dict[str, Sequence[float]],
        controls: Iterable[str] = (),
    ) -> "AttributeTable":
        controls = set(controls)
        names = tuple(columns)
        unknown = controls - set(names)
        if unknown:
            raise ShapeMismatch(f"unknown control columns {sorted(unknown)}")
        cols = []
        for name in names:
            c = columns[name]
            cols.append(np.asarray(c.toarray().ravel() if sp.issparse(c) else c, dtype=np.float64))
        if len({len(c) for c in cols}) > 1:
            raise ShapeMismatch("all columns must have length n_docs")
        part = tuple(CONTROL if n in controls else TARGET for n in names)
        return cls(names, np.column_stack(cols), part)

    @property
    def n_docs(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def targets(self) -> list[int]:
        return [k for k, t in enumerate(self.partition) if t == TARGET]

    @property
    def controls(self) -> list[int]:
        return [k for k, t in enumerate(self.partition) if t == CONTROL]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def subset(self, rows) -> "AttributeTable":
        return AttributeTable(self.names, self.values[rows], self.partition, self.scaling)

    def drop(self, names: Iterable[str]) -> "AttributeTable":
        keep = [k for k, n in enumerate(self.names) if n not in set(names)]
        return AttributeTable(
            tuple(self.names[k] for k in keep),
            self.values[:, keep],
            tuple(self.partition[k] for k in keep),
            tuple(self.scaling[k] for k in keep),
        )

    def to_raw_scale(self, alpha: float, phi: np.ndarray) -> tuple[float, np.ndarray]:
        """Convert (intercept, coefficients) fitted on this table to raw-column units."""
        mean = np.array([s[0] for s in self.scaling])
        sd = np.array([s[1] for s in self.scaling])
        raw = np.asarray(phi, dtype=np.float64) / sd
        return float(alpha - raw @ mean), raw


def standardize(attrs: AttributeTable, which: Iterable[str] | None = None) -> AttributeTable:
    """Center and scale columns to sample mean 0, sample variance 1.

    By default only target columns are standardized; control indicators stay
    raw. Scaling composes with any previously recorded (mean, sd).
    """
    if which is None:
        cols = attrs.targets
    else:
        cols = [attrs.names.index(n) for n in which]
    vals = attrs.values.copy()
    scaling = list(attrs.scaling)
    for k in cols:
        x = vals[:, k]
        mu = x.mean()
        sd = x.std(ddof=1) if len(x) > 1 else 0.0
        if not sd > 1e-12 * max(1.0, abs(mu)):
            raise ZeroVarianceColumn(f"column {attrs.names[k]!r} has zero variance")
        vals[:, k] = (x - mu) / sd
        m0, s0 = scaling[k]
        scaling[k] = (m0 + s0 * mu, s0 * sd)
    return AttributeTable(attrs.names, vals, attrs.partition, tuple(scaling))
