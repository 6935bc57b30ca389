"""Shared builders for the test modules."""

from __future__ import annotations


import numpy as np

from dmr import glm
from dmr.counts import AttributeTable, SparseCounts, counts_from_matrix

# path settings that reach the unpenalized end of the path tightly
LAMBDA0 = glm.PathConfig(lambda_min_ratio=1e-12, tolerance=1e-20, n_lambda=30)


def lambda0_fit(counts: SparseCounts, V, cfg: glm.PathConfig = LAMBDA0):
    """Per-token Poisson paths with offsets log m_i; the last (smallest lambda) segment.

    Returns (alpha, Phi) with Phi of shape p x d.
    """
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    off = np.log(counts.doc_totals.astype(np.float64))
    d, p = counts.n_tokens, V.shape[1]
    alpha, phi = np.zeros(d), np.zeros((p, d))
    for j in range(d):
        path = glm.fit_path(counts.dense_column(j), V, off, None, cfg)
        alpha[j], phi[:, j] = path.alphas[-1], path.coefs[-1]
    return alpha, phi


def eta_of(alpha, phi, V):
    return alpha[None, :] + np.atleast_2d(V) @ phi


def plugin_gradient(alpha, phi, V, m):
    return m * (np.exp(eta_of(alpha, phi, V)).sum(axis=1) - 1.0)


def all_positive_counts(rng, n, d, lo=5, hi=40):
    m = rng.integers(lo, hi, size=n)
    C = np.vstack([rng.multinomial(mi, rng.dirichlet(np.ones(d) * 3)) for mi in m])
    C[C == 0] = 1
    return C


def intercept_only_case(rng):
    n, d = int(rng.integers(5, 25)), int(rng.integers(2, 8))
    C = all_positive_counts(rng, n, d)
    return counts_from_matrix(C), np.zeros((n, 1))


def binary_case(rng):
    n, d = int(rng.integers(8, 30)), int(rng.integers(2, 8))
    v = np.zeros(n)
    v[: n // 2] = 1.0
    rng.shuffle(v)
    C = all_positive_counts(rng, n, d)
    return counts_from_matrix(C), v[:, None]


def saturated_case(rng):
    n, d = int(rng.integers(3, 7)), int(rng.integers(2, 6))
    C = all_positive_counts(rng, n, d)
    V = np.eye(n)[:, 1:]  # one indicator per document beyond the first
    return counts_from_matrix(C), V


def attrs_of(V) -> AttributeTable:
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    return AttributeTable(tuple(f"v{k}" for k in range(V.shape[1])), V, ("target",) * V.shape[1])


def closed_form_probs(C, V, design):
    """Empirical multinomial MLE probabilities for the three analytic designs."""
    C = np.asarray(C, dtype=np.float64)
    if design == "intercept":
        q = C.sum(axis=0) / C.sum()
        return np.tile(q, (len(C), 1))
    if design == "saturated":
        return C / C.sum(axis=1, keepdims=True)
    v = V[:, 0]
    out = np.zeros_like(C)
    for g in (0.0, 1.0):
        rows = v == g
        out[rows] = C[rows].sum(axis=0) / C[rows].sum()
    return out


def closed_form_params(C, V, design):
    C = np.asarray(C, dtype=np.float64)
    if design == "intercept":
        return {"alpha": np.log(C.sum(axis=0) / C.sum())}
    if design == "binary":
        v = V[:, 0]
        a0 = np.log(C[v == 0].sum(axis=0) / C[v == 0].sum())
        a1 = np.log(C[v == 1].sum(axis=0) / C[v == 1].sum())
        return {"alpha": a0, "phi": a1 - a0}
    return {"eta": np.log(C / C.sum(axis=1, keepdims=True))}




# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
