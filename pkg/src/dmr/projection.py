"""Sufficient-reduction projections z_i = Phi c_i.

Sums are exact: every z_ik is the correctly rounded value of the exact sum
of the (individually rounded) products c_ij * phi_kj. That makes the batch
result independent of summation order, so streaming accumulation across any
token partition reproduces it bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .counts import AttributeTable, SparseCounts
from .errors import DoubleAccumulate, ShapeMismatch

# products are held as integers in units of 2**-_SHIFT; covers subnormals
_SHIFT = 1100


def _exact(x: float) -> int:
    num, den = x.as_integer_ratio()
    return num << (_SHIFT - (den.bit_length() - 1))


def _round(total: int) -> float:
    return total / (1 << _SHIFT) if total else 0.0


@dataclass(frozen=True, eq=False)
class SrProjection:
    z: np.ndarray
    m: np.ndarray
    normalized: bool = False
    attribute_names: tuple[str, ...] = ()

    @property
    def n_docs(self) -> int:
        return self.z.shape[0]

    def column(self, name_or_index) -> np.ndarray:
        k = name_or_index if isinstance(name_or_index, int) else self.attribute_names.index(name_or_index)
        return self.z[:, k]

    def normalize(self) -> "SrProjection":
        if self.normalized:
            return self
        z = np.zeros_like(self.z)
        pos = self.m > 0
        z[pos] = self.z[pos] / self.m[pos, None]
        return SrProjection(z, self.m, True, self.attribute_names)


def _loadings_by_token(loadings, d: int) -> sp.csc_matrix:
    L = sp.csc_matrix(loadings, dtype=np.float64)
    if L.shape[1] != d:
        raise ShapeMismatch(f"loadings have {L.shape[1]} token columns, counts have {d}")
    return L


def project_loadings(
    loadings, counts: SparseCounts, normalize: bool = False, attribute_names: Sequence[str] = ()
) -> SrProjection:
    """Exact z = Phi c for a p x d loading matrix (dense or sparse)."""
    L = _loadings_by_token(loadings, counts.n_tokens)
    p = L.shape[0]
    Lt = L.T.tocsr()  # d x p
    C = counts.matrix.tocsr()
    z = np.zeros((counts.n_docs, p))
    for i in range(counts.n_docs):
        lo, hi = C.indptr[i], C.indptr[i + 1]
        if lo == hi:
            continue
        toks = C.indices[lo:hi]
        prod = C.data[lo:hi, None].astype(np.float64) * Lt[toks].toarray()
        for k in range(p):
            col = prod[:, k]
            col = col[col != 0.0]
            if col.size:
                z[i, k] = math.fsum(col.tolist())
    proj = SrProjection(z, counts.doc_totals.astype(np.float64), False, tuple(attribute_names))
    return proj.normalize() if normalize else proj


def project(model, counts: SparseCounts, normalize: bool = False) -> SrProjection:
    """Project every document through a fitted model's loadings."""
    return project_loadings(model.loadings, counts, normalize, model.attribute_names)


@dataclass
class SrAccumulator:
    """Worker-local running totals z_i += c_ij * phi_j, kept exact."""

    n_docs: int
    p: int
    cells: dict = field(default_factory=dict)
    tokens: set = field(default_factory=set)

    def add_token(self, token: int, phi: dict[int, float] | np.ndarray, rows, counts) -> None:
        if token in self.tokens:
            raise DoubleAccumulate(f"token {token} already accumulated")
        self.tokens.add(token)
        if not isinstance(phi, dict):
            arr = np.asarray(phi, dtype=np.float64)
            if arr.shape != (self.p,):
                raise ShapeMismatch("phi must have one entry per attribute")
            phi = {int(k): float(arr[k]) for k in np.flatnonzero(arr)}
        if not phi:
            return
        cells = self.cells
        for i, c in zip(np.asarray(rows).tolist(), np.asarray(counts).tolist()):
            if not 0 <= i < self.n_docs:
                raise ShapeMismatch(f"document index {i} out of range")
            for k, v in phi.items():
                prod = float(c) * v
                if prod != 0.0:
                    key = (i, k)
                    cells[key] = cells.get(key, 0) + _exact(prod)

    def merge(self, other: "SrAccumulator") -> "SrAccumulator":
        if (self.n_docs, self.p) != (other.n_docs, other.p):
            raise ShapeMismatch("accumulators have different shapes")
        both = self.tokens & other.tokens
        if both:
            raise DoubleAccumulate(f"tokens {sorted(both)[:5]} accumulated twice")
        out = SrAccumulator(self.n_docs, self.p, dict(self.cells), set(self.tokens) | other.tokens)
        for key, v in other.cells.items():
            out.cells[key] = out.cells.get(key, 0) + v
        return out

    def finalize(self, m, normalize: bool = False, attribute_names: Sequence[str] = ()) -> SrProjection:
        z = np.zeros((self.n_docs, self.p))
        for (i, k), total in self.cells.items():
            z[i, k] = _round(total)
        proj = SrProjection(z, np.asarray(m, dtype=np.float64), False, tuple(attribute_names))
        return proj.normalize() if normalize else proj


def streaming_accumulate(partial: SrAccumulator, token: int, phi, rows, counts) -> SrAccumulator:
    """Fold one token's coefficients and count column into ``partial`` (in place)."""
    partial.add_token(token, phi, rows, counts)
    return partial


def top_documents(
    projection: SrProjection,
    attribute,
    m_range: tuple[float, float] | None = None,
) -> list[int]:
    """Documents ordered by descending z for one attribute.

    ``m_range=(lo, hi)`` keeps documents with ``lo < m < hi``. Ties go to the
    lower document index.
    """
    z = projection.column(attribute)
    idx = np.arange(projection.n_docs)
    if m_range is not None:
        lo, hi = m_range
        keep = (projection.m > lo) & (projection.m < hi)
        idx = idx[keep]
    order = np.lexsort((idx, -z[idx]))
    return idx[order].tolist()


def _corr(cols: np.ndarray) -> np.ma.MaskedArray:
    n, q = cols.shape
    sd = cols.std(axis=0, ddof=1)
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(cols).max(axis=0))
    out = np.ma.masked_all((q, q))
    good = np.flatnonzero(ok)
    if good.size:
        c = np.corrcoef(cols[:, good], rowvar=False).reshape(good.size, good.size)
        c = np.clip((c + c.T) / 2.0, -1.0, 1.0)
        np.fill_diagonal(c, 1.0)
        out[np.ix_(good, good)] = c
    return out


def projection_correlations(
    projection: SrProjection, attrs: AttributeTable, names: Sequence[str] | None = None
) -> tuple[np.ma.MaskedArray, np.ma.MaskedArray]:
    """Pearson correlations among attributes and among their projections.

    Entries involving a zero-variance column are masked (undefined) rather
    than NaN.
    """
    if projection.n_docs != attrs.n_docs:
        raise ShapeMismatch("projection and attributes cover different documents")
    if projection.n_docs < 2:
        raise ShapeMismatch("need at least two documents")
    names = list(names) if names is not None else list(attrs.names)
    ia = [attrs.names.index(nm) for nm in names]
    pnames = projection.attribute_names or attrs.names
    iz = [list(pnames).index(nm) for nm in names]
    return _corr(attrs.values[:, ia]), _corr(projection.z[:, iz])
