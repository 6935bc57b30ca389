"""Synthetic data generators with documented seeds.

These stand in for the real corpora at desk scale: a forensic-glass-like
softmax classification problem and count data drawn from the multinomial
logistic model itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counts import AttributeTable, SparseCounts, counts_from_matrix

GLASS_SEED = 20140214
GLASS_CLASSES = ("WinF", "WinNF", "Veh", "Con", "Tabl", "Head")
GLASS_SIZES = (70, 76, 17, 13, 9, 29)
GLASS_SEPARATION = 0.6
GLASS_FEATURES = ("RI", "Na", "Mg", "Al", "Si", "K", "Ca", "Ba", "Fe")


@dataclass(frozen=True, eq=False)
class Simulated:
    counts: SparseCounts
    attrs: AttributeTable
    alpha: np.ndarray
    phi: np.ndarray  # p x d
    extra: dict


def glass_like(
    seed: int = GLASS_SEED, n_per_class=GLASS_SIZES, separation: float = GLASS_SEPARATION
) -> tuple[np.ndarray, AttributeTable]:
    """214 one-hot labelled shards with 9 correlated standardized covariates.

    Classes are Gaussian with a shared covariance, so the softmax model is
    well specified; class separations are moderate and uneven.
    """
    rng = np.random.default_rng(seed)
    d, p = len(n_per_class), len(GLASS_FEATURES)
    A = rng.normal(size=(p, p)) / np.sqrt(p)
    cov = A @ A.T + 0.5 * np.eye(p)
    chol = np.linalg.cholesky(cov)
    means = rng.normal(scale=separation, size=(d, p))
    means[:, 5:] *= 0.4  # a few weak features
    X, y = [], []
    for j, nj in enumerate(n_per_class):
        X.append(means[j] + rng.normal(size=(nj, p)) @ chol.T)
        y.append(np.full(nj, j))
    X = np.vstack(X)
    y = np.concatenate(y)
    order = rng.permutation(len(y))
    X, y = X[order], y[order]
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    onehot = np.zeros((len(y), d), dtype=np.int64)
    onehot[np.arange(len(y)), y] = 1
    attrs = AttributeTable(GLASS_FEATURES, X, ("target",) * p)
    return onehot, attrs


def multinomial_counts(
    n: int,
    d: int,
    p: int,
    seed: int = 0,
    mean_length: float = 60.0,
    signal: float = 0.4,
    density: float = 0.3,
    V: np.ndarray | None = None,
) -> Simulated:
    """Documents drawn from the multinomial logistic model.

    Attributes are iid standard normal unless ``V`` is given; each loading
    is nonzero with probability ``density`` and then N(0, signal^2);
    document lengths are 1 + Poisson(mean_length - 1).
    """
    rng = np.random.default_rng(seed)
    if V is None:
        V = rng.normal(size=(n, p))
    alpha = rng.normal(scale=1.0, size=d)
    phi = rng.normal(scale=signal, size=(p, d)) * (rng.random((p, d)) < density)
    eta = alpha[None, :] + V @ phi
    eta -= eta.max(axis=1, keepdims=True)
    q = np.exp(eta)
    q /= q.sum(axis=1, keepdims=True)
    m = 1 + rng.poisson(mean_length - 1, size=n)
    C = np.vstack([rng.multinomial(m[i], q[i]) for i in range(n)])
    names = tuple(f"v{k}" for k in range(p))
    attrs = AttributeTable(names, V, ("target",) * p)
    return Simulated(counts_from_matrix(C), attrs, alpha, phi, {"q": q})


def confounded_text(
    n: int = 1000,
    d: int = 100,
    seed: int = 0,
    effect: float = 0.3,
    confounding: float = 1.0,
    doc_length: int = 200,
    loading_sd: float = 1.0,
) -> Simulated:
    """A latent confounder u drives both the text and (treatment, response).

    ``t = u + e_t`` and ``y = effect * t + confounding * u + e_y`` with unit
    normal noise, while counts follow the multinomial logistic model in u
    alone. Marginal regression of y on t is biased by ``confounding / 2``;
    the text carries the information needed to remove it.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=n)
    t = u + rng.normal(size=n)
    y = effect * t + confounding * u + rng.normal(size=n)
    alpha = rng.normal(scale=0.5, size=d)
    load = rng.normal(scale=loading_sd, size=d)
    eta = alpha[None, :] + u[:, None] * load[None, :]
    eta -= eta.max(axis=1, keepdims=True)
    q = np.exp(eta)
    q /= q.sum(axis=1, keepdims=True)
    m = np.full(n, doc_length)
    C = np.vstack([rng.multinomial(m[i], q[i]) for i in range(n)])
    attrs = AttributeTable(("y", "t"), np.column_stack([y, t]), ("target", "target"))
    return Simulated(
        counts_from_matrix(C), attrs, alpha, load[None, :],
        {"u": u, "effect": effect, "marginal_bias": confounding / 2.0},
    )
