"""Forward regressions on SR projections: prediction and treatment effects.

Forward models are Gaussian lasso paths on a low-dimensional design
``[other attributes, m, z_y]``. Raw token counts never enter a forward
design; :func:`forward_design` refuses them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import glm
from .counts import AttributeTable, SparseCounts, counts_from_matrix
from .engine import fit_dmr_with_projection
from .errors import DimensionFirewall, InvalidSpec, MissingProjection, RankDeficientControls, ShapeMismatch
from .projection import SrProjection, project_loadings


def forward_design(
    attrs: AttributeTable, m, z_y, target: str, extra: Sequence[str] = ()
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Columns ``[v_-y, m, z_y]`` in that order, plus their names.

    ``z_y`` must be a single projection column; passing counts (or any
    matrix) raises DimensionFirewall.
    """
    for obj, label in ((m, "m"), (z_y, "z_y")):
        if isinstance(obj, SparseCounts) or hasattr(obj, "tocsc"):
            raise DimensionFirewall(f"{label} must be a vector, not a count matrix")
        if np.ndim(obj) != 1:
            raise DimensionFirewall(f"{label} must be one-dimensional, got shape {np.shape(obj)}")
    m = np.asarray(m, dtype=np.float64)
    z_y = np.asarray(z_y, dtype=np.float64)
    if len(m) != attrs.n_docs or len(z_y) != attrs.n_docs:
        raise ShapeMismatch("m and z_y must have one entry per document")
    if target not in attrs.names:
        raise ShapeMismatch(f"unknown target {target!r}")
    keep = [k for k, nm in enumerate(attrs.names) if nm != target and nm not in extra]
    names = tuple(attrs.names[k] for k in keep) + ("m", f"z_{target}")
    X = np.column_stack([attrs.values[:, keep], m, z_y])
    return X, names


def _standardized_path(y, X, cfg, unpenalized=(), ridge=0.0):
    """Gaussian path on standardized columns, with coefficients mapped back to raw units.

    Constant columns are left out and get a zero coefficient.
    """
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
    Xs = (X[:, live] - mean[live]) / sd[live]
    idx = np.flatnonzero(live)
    unpen = [int(np.searchsorted(idx, k)) for k in unpenalized if live[k]]
    path = glm.gaussian_fit_path(y, Xs, None, cfg, unpenalized=unpen, ridge=ridge)
    coefs = np.zeros((path.n_segments, X.shape[1]))
    coefs[:, live] = path.coefs / sd[live]
    alphas = path.alphas - coefs[:, live] @ mean[live]
    return path, alphas, coefs


@dataclass(frozen=True, eq=False)
class ForwardModel:
    target: str
    columns: tuple[str, ...]
    intercept: float
    coef: np.ndarray
    segment: int
    path: glm.GlmPath = field(repr=False)

    def predict(self, X, columns: Sequence[str] | None = None) -> np.ndarray:
        if columns is not None and tuple(columns) != self.columns:
            raise ShapeMismatch(f"design columns {tuple(columns)} != fitted {self.columns}")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.columns):
            raise ShapeMismatch("design has the wrong number of columns")
        return self.intercept + X @ self.coef

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.columns.index(name)])


def fit_forward(
    projection: SrProjection,
    attrs: AttributeTable,
    totals,
    target: str,
    selection: str = "aicc",
    cfg: glm.PathConfig = glm.PathConfig(),
    n_folds: int = 5,
    seed: int = 0,
) -> ForwardModel:
    """Lasso of ``v_y`` on ``[v_-y, m, z_y]`` selected by AICc (or CV)."""
    if projection.n_docs != attrs.n_docs:
        raise ShapeMismatch("projection and attributes cover different documents")
    names = projection.attribute_names or attrs.names
    if target not in names:
        raise MissingProjection(f"no SR projection for {target!r}")
    z_y = projection.z[:, list(names).index(target)]
    X, cols = forward_design(attrs, totals, z_y, target)
    y = attrs.column(target)
    path, alphas, coefs = _standardized_path(y, X, cfg)
    if selection == "aicc":
        t = glm.select_aicc(path)
    else:
        mean, sd = X.mean(axis=0), X.std(axis=0)
        live = sd > 0
        cv = glm.cross_validate(
            y, (X[:, live] - mean[live]) / sd[live], None, None, cfg, n_folds, seed,
            family=glm.GAUSSIAN, full_path=path,
        )
        t = glm.select(path, selection, cv)
    return ForwardModel(target, cols, float(alphas[t]), coefs[t], t, path)


def r_squared(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    sst = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum((y - yhat) ** 2) / sst)


def mnir_cv_r2(
    counts: SparseCounts,
    attrs: AttributeTable,
    target: str,
    n_folds: int = 5,
    seed: int = 0,
    dmr_cfg: glm.PathConfig = glm.PathConfig(),
    fwd_cfg: glm.PathConfig = glm.PathConfig(),
    workers: int = 1,
) -> np.ndarray:
    """Per-fold OOS R^2 of inverse regression + forward lasso.

    The loadings (hence z) are refitted on each training fold, so this
    calls the full multinomial fit once per fold.
    """
    folds = glm.fold_ids(counts.n_docs, n_folds, seed)
    out = []
    for k in range(n_folds):
        tr, te = np.flatnonzero(folds != k), np.flatnonzero(folds == k)
        ctr, cte = counts_from_matrix(counts.matrix[tr]), counts_from_matrix(counts.matrix[te])
        atr, ate = attrs.subset(tr), attrs.subset(te)
        model, proj = fit_dmr_with_projection(ctr, atr, dmr_cfg, workers=workers)
        fm = fit_forward(proj, atr, ctr.doc_totals, target, cfg=fwd_cfg)
        zte = project_loadings(model.loadings, cte, attribute_names=attrs.names)
        X, cols = forward_design(ate, cte.doc_totals, zte.column(target), target)
        out.append(r_squared(ate.column(target), fm.predict(X, cols)))
    return np.array(out)


def lasso_counts_cv_r2(
    counts: SparseCounts,
    attrs: AttributeTable,
    target: str,
    n_folds: int = 5,
    seed: int = 0,
    cfg: glm.PathConfig = glm.PathConfig(),
) -> np.ndarray:
    """Per-fold OOS R^2 of a lasso of ``v_y`` on ``[v_-y, counts]`` (AICc)."""
    folds = glm.fold_ids(counts.n_docs, n_folds, seed)
    C = counts.to_dense().astype(np.float64)
    others = attrs.drop([target]).values
    X = np.column_stack([others, C])
    y = attrs.column(target)
    out = []
    for k in range(n_folds):
        tr, te = folds != k, folds == k
        path, alphas, coefs = _standardized_path(y[tr], X[tr], cfg)
        t = glm.select_aicc(path)
        out.append(r_squared(y[te], alphas[t] + X[te] @ coefs[t]))
    return np.array(out)


# --------------------------------------------------------------------------
# treatment effects


@dataclass(frozen=True)
class TreatmentSpec:
    response: str
    treatment: str
    attribute_controls: tuple[str, ...] | None = None  # None: every other attribute
    interact_with: str | None = None  # categorical attribute (integer codes)
    gamma: float = 10.0
    ridge_epsilon: float = 1e-8
    on_rank_deficient: str = "ridge"  # or "raise"

    def validate(self, attrs: AttributeTable) -> None:
        if self.response == self.treatment:
            raise InvalidSpec("treatment and response must differ")
        for nm in (self.response, self.treatment):
            if nm not in attrs.names:
                raise InvalidSpec(f"unknown attribute {nm!r}")
        for nm in self.attribute_controls or ():
            if nm not in attrs.names or nm in (self.response, self.treatment):
                raise InvalidSpec(f"bad control {nm!r}")
        if self.interact_with is not None and self.interact_with not in attrs.names:
            raise InvalidSpec(f"unknown interaction attribute {self.interact_with!r}")
        if self.on_rank_deficient not in ("ridge", "raise"):
            raise InvalidSpec("on_rank_deficient must be 'ridge' or 'raise'")

    def controls(self, attrs: AttributeTable) -> list[str]:
        if self.attribute_controls is not None:
            return list(self.attribute_controls)
        return [nm for nm in attrs.names if nm not in (self.response, self.treatment)]


@dataclass(frozen=True)
class EffectEstimate:
    label: str
    estimate: float
    n_controls: int
    ridge: float
    segment: int


@dataclass(frozen=True)
class EffectTable:
    rows: tuple[EffectEstimate, ...]
    provenance: dict

    def estimates(self) -> dict[str, float]:
        return {r.label: r.estimate for r in self.rows}

    def format(self) -> str:
        head = "\t".join(r.label for r in self.rows)
        vals = "\t".join(f"{r.estimate:.6g}" for r in self.rows)
        return f"\t{head}\neffect\t{vals}\n"


def interaction_block(block: np.ndarray, codes) -> np.ndarray:
    """Full-dummy interactions: one copy of ``block`` per category level."""
    codes = np.asarray(codes)
    levels = np.unique(codes)
    return np.column_stack([block * (codes == lv)[:, None] for lv in levels])


def treatment_path(y, t, W, cfg: glm.PathConfig, ridge_epsilon: float = 1e-8, strict: bool = False):
    """Gamma-lasso path on the treatment alone with unpenalized controls ``W``.

    Controls are profiled out exactly (partialling out), after which the
    problem is a one-covariate path. A ridge of ``ridge_epsilon`` (relative
    to the average control scale) is applied only when ``[1, W]`` is rank
    deficient, unless ``strict`` asks for RankDeficientControls instead.
    Returns (estimate, segment, ridge used, n_controls).
    """
    n = len(y)
    W1 = np.column_stack([np.ones(n), W]) if W is not None and W.size else np.ones((n, 1))
    rank = np.linalg.matrix_rank(W1)
    ridge = 0.0
    if rank < W1.shape[1]:
        if strict:
            raise RankDeficientControls(f"controls have rank {rank} < {W1.shape[1]}")
        ridge = ridge_epsilon * float(np.mean(np.sum(W1**2, axis=0)))
    G = W1.T @ W1 + ridge * np.eye(W1.shape[1])

    def resid(v):
        return v - W1 @ np.linalg.solve(G, W1.T @ v)

    ry, rt = resid(np.asarray(y, float)), resid(np.asarray(t, float))
    sd = rt.std()
    if not sd > 0:
        return 0.0, 0, ridge, W1.shape[1] - 1
    path = glm.gaussian_fit_path(ry, rt / sd, None, cfg)
    n_par = min(rank, W1.shape[1])
    crit = np.array([
        glm._aicc_or_inf(n * math.log(max(dev, 1e-300) / n), n_par + int(df) - 1, n)
        for dev, df in zip(path.deviance, path.df)
    ])
    t_sel = int(np.argmin(crit)) if np.isfinite(crit).any() else 0
    return float(path.coefs[t_sel, 0] / sd), t_sel, ridge, W1.shape[1] - 1


def estimate_treatment_effect(
    spec: TreatmentSpec,
    counts: SparseCounts,
    attrs: AttributeTable,
    projection: SrProjection | None = None,
    dmr_cfg: glm.PathConfig = glm.PathConfig(),
    workers: int = 1,
) -> EffectTable:
    """Marginal, attribute-controlled and SR-controlled treatment effects.

    The third estimate adds ``[z_y, z_t, m]`` (and, if requested, their
    full-dummy interactions with a categorical attribute) to the controls.
    Every estimate is the AICc choice along a near-L0 path on the treatment
    with all other coefficients unpenalized.
    """
    spec.validate(attrs)
    if projection is None:
        _, projection = fit_dmr_with_projection(counts, attrs, dmr_cfg, workers=workers)
    names = projection.attribute_names or attrs.names
    for nm in (spec.response, spec.treatment):
        if nm not in names:
            raise MissingProjection(f"no SR projection for {nm!r}")
    y, t = attrs.column(spec.response), attrs.column(spec.treatment)
    cfg = glm.PathConfig(gamma=spec.gamma)
    ctrl = spec.controls(attrs)
    V = np.column_stack([attrs.column(nm) for nm in ctrl]) if ctrl else np.zeros((attrs.n_docs, 0))
    sr = np.column_stack([
        projection.z[:, list(names).index(spec.response)],
        projection.z[:, list(names).index(spec.treatment)],
        counts.doc_totals.astype(np.float64),
    ])
    blocks = [V, sr]
    if spec.interact_with is not None:
        blocks.append(interaction_block(sr, attrs.column(spec.interact_with)))
    rows = []
    for label, W in (
        ("marginal", None),
        ("attributes", V),
        ("attributes+sr", np.column_stack(blocks)),
    ):
        est, seg, ridge, q = treatment_path(y, t, W, cfg, spec.ridge_epsilon, spec.on_rank_deficient == "raise")
        rows.append(EffectEstimate(label, est, q, ridge, seg))
    prov = {
        "response": spec.response,
        "treatment": spec.treatment,
        "controls": ctrl,
        "interact_with": spec.interact_with,
        "gamma": spec.gamma,
        "ridge": {r.label: r.ridge for r in rows},
        "interaction_coding": "full dummy",
    }
    return EffectTable(tuple(rows), prov)
