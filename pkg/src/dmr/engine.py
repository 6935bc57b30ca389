"""Distributed multinomial regression: one Poisson path per token.

Every token's regression uses the fixed offsets ``log m_i`` and shares
nothing with the other tokens, so tokens can be fitted in any order on any
number of workers. Results are merged by token index, which makes the
fitted model a function of the data and configuration alone.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import glm
from .counts import AttributeTable, SparseCounts, TokenShard, shard_by_token
from .errors import DataError, EmptyFold, NumericalError, ShapeMismatch
from .projection import SrAccumulator, SrProjection

log = logging.getLogger(__name__)

RULES = ("aicc", "cvmin", "cv1se")

OK = "ok"
TRUNCATED = "truncated"
DROPPED_ZERO = "dropped:zero-count"
FAILED = "failed"


@dataclass(frozen=True)
class TokenFit:
    token: int
    alpha: float
    phi: dict
    lam: float
    df: int
    segment: int
    status: str


@dataclass(frozen=True, eq=False)
class DmrModel:
    """Selected intercepts and the sparse p x d loading matrix.

    ``status[j]`` is ``"ok"``, ``"truncated"`` (path stopped early; the
    selection was made among converged segments), ``"failed"`` (intercept
    only), or ``"dropped:zero-count"``. Dropped tokens carry a 0.0
    placeholder intercept and are excluded from probabilities.
    """

    intercepts: np.ndarray
    loadings: sp.csc_matrix
    attribute_names: tuple[str, ...]
    selection: str
    config: dict
    selected_lambda: np.ndarray
    selected_df: np.ndarray
    status: tuple[str, ...]
    token_names: tuple[str, ...] | None = None
    scaling: tuple[tuple[float, float], ...] = ()

    @property
    def n_tokens(self) -> int:
        return len(self.intercepts)

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def retained(self) -> np.ndarray:
        return np.array([not s.startswith("dropped") for s in self.status])

    def linear_predictor(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        if V.shape[1] != self.p:
            raise ShapeMismatch(f"expected {self.p} attributes, got {V.shape[1]}")
        eta = self.intercepts[None, :] + np.asarray(self.loadings.T.dot(V.T).T)
        eta[:, ~self.retained] = -np.inf
        return eta

    def probabilities(self, V) -> np.ndarray:
        eta = self.linear_predictor(V)
        eta = eta - eta.max(axis=1, keepdims=True)
        q = np.exp(eta)
        return q / q.sum(axis=1, keepdims=True)

    def same_as(self, other: "DmrModel") -> bool:
        a, b = self.loadings, other.loadings
        return (
            np.array_equal(self.intercepts, other.intercepts)
            and a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.selected_lambda, other.selected_lambda, equal_nan=True)
            and np.array_equal(self.selected_df, other.selected_df)
            and self.status == other.status
            and self.attribute_names == other.attribute_names
            and self.config == other.config
        )


@dataclass(frozen=True, eq=False)
class MuDiagnostic:
    mu_star: np.ndarray
    residual: np.ndarray
    mean: float
    sd: float


# --------------------------------------------------------------------------
# per-token fitting


@dataclass(frozen=True, eq=False)
class _Shared:
    V: np.ndarray
    offsets: np.ndarray
    partition: tuple[str, ...]
    cfg: glm.PathConfig
    selection: str
    n_folds: int
    seed: int


_SHARED: _Shared | None = None


def _init_worker(shared: _Shared) -> None:
    global _SHARED
    _SHARED = shared


def _select(j, y, path, V, off, partition, cfg, rule, n_folds, seed) -> int:
    """Segment index under ``rule``; a token too rare to cross-validate falls back to AICc."""
    if rule == "aicc":
        return glm.select_aicc(path)
    try:
        cv = glm.cross_validate(y, V, off, partition, cfg, n_folds, seed, full_path=path)
    except EmptyFold as exc:
        log.warning("token %d: %s; selecting by AICc", j, exc)
        return glm.select_aicc(path)
    return glm.select(path, rule, cv)


def fit_token(j: int, rows, vals, sh: _Shared) -> TokenFit:
    """Fit and select one token's path. Never raises for numerical trouble."""
    n = sh.V.shape[0]
    y = np.zeros(n)
    y[rows] = vals
    usable = np.isfinite(sh.offsets)
    total = y[usable].sum()
    if total <= 0:
        return TokenFit(j, 0.0, {}, math.nan, 0, -1, DROPPED_ZERO)
    try:
        path = glm.fit_path(y, sh.V, sh.offsets, sh.partition, sh.cfg)
        t = _select(j, y, path, sh.V, sh.offsets, sh.partition, sh.cfg, sh.selection, sh.n_folds, sh.seed)
    except (NumericalError, DataError) as exc:
        log.warning("token %d: %s; falling back to intercept only", j, exc)
        alpha = math.log(total / np.exp(sh.offsets[usable]).sum())
        return TokenFit(j, alpha, {}, math.nan, 1, -1, FAILED)
    alpha, phi = path.segment(t)
    status = OK if path.converged else TRUNCATED
    return TokenFit(j, alpha, phi, float(path.lambdas[t]), int(path.df[t]), t, status)


def _fit_shard(shard: TokenShard, sh: _Shared | None = None, accumulate: bool = False):
    sh = sh if sh is not None else _SHARED
    fits = []
    acc = SrAccumulator(sh.V.shape[0], sh.V.shape[1]) if accumulate else None
    usable = np.isfinite(sh.offsets)
    for local, j in enumerate(shard.token_indices.tolist()):
        rows, vals = shard.column(local)
        tf = fit_token(j, rows, vals, sh)
        fits.append(tf)
        if acc is not None:
            keep = usable[rows]
            acc.add_token(j, tf.phi, rows[keep], vals[keep])
    return shard.shard_id, fits, acc


def _check(counts: SparseCounts, attrs: AttributeTable, selection: str):
    if attrs.n_docs != counts.n_docs:
        raise ShapeMismatch(f"{attrs.n_docs} attribute rows vs {counts.n_docs} documents")
    if selection not in RULES:
        raise ValueError(f"selection must be one of {RULES}")
    if not (counts.doc_totals > 0).any():
        raise DataError("every document is empty")


def _assemble(fits: list[TokenFit], d: int, p: int, attrs, selection, config, token_names) -> DmrModel:
    fits = sorted(fits, key=lambda f: f.token)
    if [f.token for f in fits] != list(range(d)):
        raise RuntimeError("merge lost or duplicated tokens")
    rows, cols, vals = [], [], []
    for f in fits:
        for k in sorted(f.phi):
            rows.append(k)
            cols.append(f.token)
            vals.append(f.phi[k])
    L = sp.csc_matrix(
        (np.array(vals, dtype=np.float64), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(p, d),
    )
    L.sort_indices()
    return DmrModel(
        intercepts=np.array([f.alpha for f in fits], dtype=np.float64),
        loadings=L,
        attribute_names=tuple(attrs.names),
        selection=selection,
        config=config,
        selected_lambda=np.array([f.lam for f in fits], dtype=np.float64),
        selected_df=np.array([f.df for f in fits], dtype=np.int64),
        status=tuple(f.status for f in fits),
        token_names=tuple(token_names) if token_names is not None else None,
        scaling=tuple(attrs.scaling),
    )


def fit_dmr_with_projection(
    counts: SparseCounts,
    attrs: AttributeTable,
    cfg: glm.PathConfig = glm.PathConfig(),
    selection: str = "aicc",
    workers: int = 1,
    n_shards: int | None = None,
    shard_policy: str = "contiguous",
    n_folds: int = 5,
    seed: int = 0,
    token_names: Sequence[str] | None = None,
    accumulate: bool = True,
) -> tuple[DmrModel, SrProjection | None]:
    """Fit every token and, optionally, stream the SR projection as a by-product."""
    _check(counts, attrs, selection)
    with np.errstate(divide="ignore"):
        offsets = np.log(counts.doc_totals.astype(np.float64))
    shared = _Shared(
        np.asfortranarray(attrs.values), offsets, tuple(attrs.partition), cfg, selection, n_folds, seed
    )
    n_shards = n_shards if n_shards is not None else max(workers, 1)
    shards = shard_by_token(counts, n_shards, shard_policy)
    if workers <= 1:
        results = [_fit_shard(s, shared, accumulate) for s in shards]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(shared,)) as pool:
            results = list(pool.map(_fit_shard, shards, [None] * len(shards), [accumulate] * len(shards)))
    fits = [f for _, fs, _ in results for f in fs]
    config = dict(cfg.as_dict(), selection=selection, seed=seed, n_folds=n_folds)
    model = _assemble(fits, counts.n_tokens, attrs.p, attrs, selection, config, token_names)
    proj = None
    if accumulate:
        acc = SrAccumulator(counts.n_docs, attrs.p)
        for _, _, part in sorted(results, key=lambda r: r[0]):
            acc = acc.merge(part)
        proj = acc.finalize(counts.doc_totals, attribute_names=attrs.names)
    return model, proj


def fit_dmr(
    counts: SparseCounts,
    attrs: AttributeTable,
    cfg: glm.PathConfig = glm.PathConfig(),
    selection: str = "aicc",
    workers: int = 1,
    n_shards: int | None = None,
    shard_policy: str = "contiguous",
    n_folds: int = 5,
    seed: int = 0,
    token_names: Sequence[str] | None = None,
) -> DmrModel:
    """Fit the multinomial model by independent per-token Poisson paths.

    The result is identical for any ``workers`` and ``n_shards``.
    """
    model, _ = fit_dmr_with_projection(
        counts, attrs, cfg, selection, workers, n_shards, shard_policy, n_folds, seed,
        token_names, accumulate=False,
    )
    return model


def predict_probabilities(model: DmrModel, attrs_row) -> np.ndarray:
    """Multinomial probabilities for one attribute row (or a matrix of rows)."""
    V = np.asarray(attrs_row, dtype=np.float64)
    q = model.probabilities(V)
    return q[0] if V.ndim == 1 else q


def mu_diagnostic(model: DmrModel, counts: SparseCounts, attrs: AttributeTable) -> MuDiagnostic:
    """Conditional MLE ``log(m_i / Lambda_i)`` and its gap from ``log m_i``."""
    if counts.n_docs != attrs.n_docs or counts.n_tokens != model.n_tokens or attrs.p != model.p:
        raise ShapeMismatch("model, counts and attributes disagree in shape")
    eta = model.linear_predictor(attrs.values)
    top = eta.max(axis=1)
    log_lam = top + np.log(np.exp(eta - top[:, None]).sum(axis=1))
    m = counts.doc_totals.astype(np.float64)
    pos = m > 0
    mu_star = np.full(len(m), np.nan)
    resid = np.full(len(m), np.nan)
    mu_star[pos] = np.log(m[pos]) - log_lam[pos]
    resid[pos] = -log_lam[pos]
    r = resid[pos]
    return MuDiagnostic(mu_star, resid, float(r.mean()), float(r.std(ddof=1)) if r.size > 1 else 0.0)


def plugin_gradient(model: DmrModel, counts: SparseCounts, attrs: AttributeTable) -> np.ndarray:
    """g(log m_i) = m_i (sum_j exp(eta_ij) - 1) for every document."""
    eta = model.linear_predictor(attrs.values)
    m = counts.doc_totals.astype(np.float64)
    return m * (np.exp(eta).sum(axis=1) - 1.0)


def multinomial_deviance(counts_dense: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-document deviance ``2 sum_j c_ij log(c_ij / (m_i q_ij))``."""
    c = np.asarray(counts_dense, dtype=np.float64)
    m = c.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(c > 0, c * np.log(c / (m * q)), 0.0)
    return 2.0 * terms.sum(axis=1)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
