"""Out-of-sample comparison of per-token DMR fits against the joint softmax."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import glm
from .counts import AttributeTable, SparseCounts, counts_from_matrix
from .engine import DmrModel, RULES, TokenFit, _assemble, _Shared, fit_token
from .errors import EmptyFold
from .softmax import softmax_cv, softmax_deviance


def fit_dmr_rules(
    counts: SparseCounts,
    attrs: AttributeTable,
    cfg: glm.PathConfig,
    rules: Sequence[str],
    n_folds: int = 5,
    seed: int = 0,
) -> dict[str, DmrModel]:
    """Fit each token's path once and select it under several rules."""
    with np.errstate(divide="ignore"):
        off = np.log(counts.doc_totals.astype(np.float64))
    V = np.asfortranarray(attrs.values)
    need_cv = any(r != "aicc" for r in rules)
    fits: dict[str, list[TokenFit]] = {r: [] for r in rules}
    config = dict(cfg.as_dict(), seed=seed, n_folds=n_folds)
    for j in range(counts.n_tokens):
        rows, vals = counts.column(j)
        y = np.zeros(counts.n_docs)
        y[rows] = vals
        if y[np.isfinite(off)].sum() <= 0:
            sh = _Shared(V, off, attrs.partition, cfg, "aicc", n_folds, seed)
            for r in rules:
                fits[r].append(fit_token(j, rows, vals, sh))
            continue
        path = glm.fit_path(y, V, off, attrs.partition, cfg)
        cv = None
        if need_cv:
            try:
                cv = glm.cross_validate(y, V, off, attrs.partition, cfg, n_folds, seed, full_path=path)
            except EmptyFold:
                pass  # too rare to cross-validate: every rule falls back to AICc
        status = "ok" if path.converged else "truncated"
        for r in rules:
            t = glm.select(path, r if cv is not None else "aicc", cv)
            a, phi = path.segment(t)
            fits[r].append(TokenFit(j, a, phi, float(path.lambdas[t]), int(path.df[t]), t, status))
    return {
        r: _assemble(fits[r], counts.n_tokens, attrs.p, attrs, r, dict(config, selection=r), None)
        for r in rules
    }


@dataclass(frozen=True, eq=False)
class OosResult:
    """Fold-level mean held-out multinomial deviance per document."""

    records: list = field(default_factory=list)  # (fold, model, rule, deviance)

    def labels(self) -> list[str]:
        seen = []
        for _, mdl, rule, _ in self.records:
            lab = f"{mdl}.{rule}"
            if lab not in seen:
                seen.append(lab)
        return seen

    def samples(self, label: str) -> np.ndarray:
        return np.array([dev for _, mdl, rule, dev in self.records if f"{mdl}.{rule}" == label])

    def table(self) -> str:
        lines = ["fold\tmodel\trule\tdeviance"]
        lines += [f"{f}\t{m}\t{r}\t{dev!r}" for f, m, r, dev in self.records]
        return "\n".join(lines) + "\n"


def oos_experiment(
    counts,
    attrs: AttributeTable,
    n_folds: int = 20,
    rules: Iterable[str] = RULES,
    seed: int = 0,
    cfg: glm.PathConfig = glm.PathConfig(),
    softmax: bool = True,
    softmax_rules: Iterable[str] = ("cvmin", "cv1se"),
    inner_folds: int = 5,
    softmax_tol: float = 1e-7,
) -> OosResult:
    """K-fold OOS multinomial deviance of DMR (per rule) and the softmax reference.

    Each outer training set gets its own fits; CV rules use ``inner_folds``
    folds inside that training set.
    """
    if n_folds < 2:
        raise ValueError("need at least two folds")
    if not isinstance(counts, SparseCounts):
        counts = counts_from_matrix(counts)
    rules = list(rules)
    C = counts.to_dense().astype(np.float64)
    folds = glm.fold_ids(counts.n_docs, n_folds, seed)
    out = OosResult()
    for k in range(n_folds):
        te, tr = folds == k, folds != k
        if not te.any() or not tr.any():
            raise EmptyFold(f"fold {k} is empty")
        tr_idx = np.flatnonzero(tr)
        ctr = counts_from_matrix(counts.matrix[tr_idx])
        atr = attrs.subset(tr_idx)
        Vte = attrs.values[te]
        models = fit_dmr_rules(ctr, atr, cfg, rules, inner_folds, seed)
        for r in rules:
            q = models[r].probabilities(Vte)
            out.records.append((k, "dmr", r, softmax_deviance(C[te], q)))
        if softmax:
            path, _, _, i_min, i_1se = softmax_cv(
                C[tr], atr.values, inner_folds, seed,
                n_lambda=cfg.n_lambda, lambda_min_ratio=cfg.lambda_min_ratio, tol=softmax_tol,
            )
            for r in softmax_rules:
                t = {"cvmin": i_min, "cv1se": i_1se}[r]
                out.records.append((k, "softmax", r, softmax_deviance(C[te], path.probabilities(t, Vte))))
    return out


@dataclass(frozen=True)
class ScalingResult:
    workers: tuple[int, ...]
    seconds: tuple[float, ...]
    cpu_count: int

    def efficiency(self, w: int) -> float:
        """Parallel efficiency ``T_1 / (w * T_w)``."""
        t1 = self.seconds[self.workers.index(1)]
        return t1 / (w * self.seconds[self.workers.index(w)])

    def table(self) -> str:
        lines = ["workers\tseconds\tefficiency"]
        lines += [f"{w}\t{s:.3f}\t{self.efficiency(w):.3f}" for w, s in zip(self.workers, self.seconds)]
        return "\n".join(lines) + "\n"


def scaling_benchmark(
    n_docs: int = 500,
    n_tokens: int = 2000,
    p: int = 5,
    workers: Sequence[int] = (1, 2, 4, 8),
    seed: int = 0,
    cfg: glm.PathConfig = glm.PathConfig(),
) -> ScalingResult:
    """Wall-clock DMR fit time against worker count on synthetic counts.

    One untimed warm-up fit compiles the kernels first.
    """
    import os
    import time

    from .engine import fit_dmr
    from .simulate import multinomial_counts

    sim = multinomial_counts(n_docs, n_tokens, p, seed=seed)
    workers = tuple(sorted(set(workers) | {1}))
    fit_dmr(sim.counts, sim.attrs, cfg, n_shards=1)
    secs = []
    for w in workers:
        t0 = time.perf_counter()
        fit_dmr(sim.counts, sim.attrs, cfg, workers=w, n_shards=max(w, 1) * 4)
        secs.append(time.perf_counter() - t0)
    return ScalingResult(workers, tuple(secs), os.cpu_count() or 1)
