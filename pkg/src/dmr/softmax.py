"""Full penalized multinomial logistic regression, used as a reference oracle.

This is the joint fit that per-token Poisson regressions approximate. It is
deliberately simple (accelerated proximal gradient on the whole parameter
block) and capped in size: it exists to check the approximation, not to
replace it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import CapExceeded, ShapeMismatch
from .glm import cv_select, fold_ids

DEFAULT_CAP = 10_000


@dataclass(frozen=True, eq=False)
class SoftmaxPath:
    lambdas: np.ndarray
    alphas: np.ndarray  # T x d
    coefs: np.ndarray  # T x p x d
    objective: np.ndarray
    iterations: np.ndarray

    def probabilities(self, t: int, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        eta = self.alphas[t][None, :] + V @ self.coefs[t]
        eta -= eta.max(axis=1, keepdims=True)
        q = np.exp(eta)
        return q / q.sum(axis=1, keepdims=True)


@numba.njit(cache=True)
def _loss_grad(alpha, phi, V, C, m, G):
    """Loss; fills G (n x d) with d loss / d eta."""
    n, d = C.shape
    p = V.shape[1]
    eta = np.empty(d)
    loss = 0.0
    for i in range(n):
        top = -np.inf
        for j in range(d):
            e = alpha[j]
            for k in range(p):
                e += V[i, k] * phi[k, j]
            eta[j] = e
            if e > top:
                top = e
        s = 0.0
        for j in range(d):
            G[i, j] = math.exp(eta[j] - top)
            s += G[i, j]
        loss += m[i] * (top + math.log(s))
        for j in range(d):
            loss -= C[i, j] * eta[j]
            G[i, j] = m[i] * G[i, j] / s - C[i, j]
    return loss


@numba.njit(cache=True)
def _prox_step(ya, yp, V, C, m, pen, step, G, na, np_):
    """Proximal gradient step from (ya, yp) into (na, np_)."""
    n, d = C.shape
    p = V.shape[1]
    _loss_grad(ya, yp, V, C, m, G)
    mean = 0.0
    for j in range(d):
        g = 0.0
        for i in range(n):
            g += G[i, j]
        na[j] = ya[j] - step * g
        mean += na[j]
    mean /= d
    for j in range(d):
        na[j] -= mean  # intercepts are only identified up to a constant
    thr = step * pen
    for k in range(p):
        for j in range(d):
            g = 0.0
            for i in range(n):
                g += V[i, k] * G[i, j]
            z = yp[k, j] - step * g
            if z > thr:
                np_[k, j] = z - thr
            elif z < -thr:
                np_[k, j] = z + thr
            else:
                np_[k, j] = 0.0


@numba.njit(cache=True)
def _fista(alpha, phi, V, C, m, pen, L, tol, max_iter):
    """Minimize loss + pen * sum|phi| from (alpha, phi); returns (alpha, phi, obj, iters).

    Momentum is reset whenever the step opposes it (gradient restart).
    """
    step = 1.0 / L
    G = np.empty(C.shape)
    xa, xp = alpha.copy(), phi.copy()
    ya, yp = xa.copy(), xp.copy()
    na, np_ = xa.copy(), xp.copy()
    t = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        _prox_step(ya, yp, V, C, m, pen, step, G, na, np_)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_new
        delta = 0.0
        scale = 1.0
        dot = 0.0
        for j in range(na.shape[0]):
            dot += (ya[j] - na[j]) * (na[j] - xa[j])
        for k in range(np_.shape[0]):
            for j in range(np_.shape[1]):
                dot += (yp[k, j] - np_[k, j]) * (np_[k, j] - xp[k, j])
        if dot > 0.0:
            mom = 0.0
            t_new = 1.0
        for j in range(na.shape[0]):
            delta = max(delta, abs(na[j] - xa[j]))
            scale = max(scale, 1.0 + abs(na[j]))
            ya[j] = na[j] + mom * (na[j] - xa[j])
            xa[j] = na[j]
        for k in range(np_.shape[0]):
            for j in range(np_.shape[1]):
                delta = max(delta, abs(np_[k, j] - xp[k, j]))
                scale = max(scale, 1.0 + abs(np_[k, j]))
                yp[k, j] = np_[k, j] + mom * (np_[k, j] - xp[k, j])
                xp[k, j] = np_[k, j]
        t = t_new
        if delta < tol * scale:
            break
    f = _loss_grad(xa, xp, V, C, m, G) + pen * np.abs(xp).sum()
    return xa, xp, f, it


def _lipschitz(V, m) -> float:
    X1 = np.column_stack([np.ones(len(m)), V])
    H = X1.T @ (m[:, None] * X1)
    return 0.5 * float(np.linalg.eigvalsh(H).max())


def fit_softmax_reference(
    counts,
    V,
    lambdas=None,
    n_lambda: int = 100,
    lambda_min_ratio: float = 0.01,
    tol: float = 1e-9,
    max_iter: int = 20_000,
    cap: int = DEFAULT_CAP,
) -> SoftmaxPath:
    """L1-penalized softmax path on ``sum_i m_i log sum_j e^eta_ij - c_i'eta_i``.

    The penalty is ``n * lambda * sum_jk |phi_jk|``; intercepts are free.
    ``counts`` is a dense ``n x d`` array (rows may sum to any m_i >= 1).
    """
    C = np.asarray(counts.to_dense() if hasattr(counts, "to_dense") else counts, dtype=np.float64)
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    if V.shape[0] != C.shape[0]:
        raise ShapeMismatch("counts and attributes must have the same rows")
    n, d = C.shape
    p = V.shape[1]
    if d * p > cap:
        raise CapExceeded(f"d*p = {d * p} exceeds the reference cap {cap}")
    m = C.sum(axis=1)
    keep = m > 0
    C, V, m = C[keep], V[keep], m[keep]
    n = len(m)
    tot = C.sum(axis=0)
    if (tot <= 0).any():
        raise ShapeMismatch("every category needs at least one count")
    q0 = tot / tot.sum()
    alpha0 = np.log(q0)
    alpha0 -= alpha0.mean()
    phi = np.zeros((p, d))
    V = np.ascontiguousarray(V)
    C = np.ascontiguousarray(C)
    if lambdas is None:
        g0 = V.T @ (C - m[:, None] * q0[None, :])
        lam_max = float(np.abs(g0).max()) / n
        lam_max = lam_max if lam_max > 0 else 1.0
        lambdas = lam_max * lambda_min_ratio ** (np.arange(n_lambda) / max(n_lambda - 1, 1))
    lambdas = np.asarray(lambdas, dtype=np.float64)
    L = _lipschitz(V, m)
    T = len(lambdas)
    alphas = np.zeros((T, d))
    coefs = np.zeros((T, p, d))
    objs = np.zeros(T)
    iters = np.zeros(T, dtype=np.int64)
    alpha = alpha0
    for t, lam in enumerate(lambdas):
        alpha, phi, f, it = _fista(alpha, phi, V, C, m, n * float(lam), L, tol, max_iter)
        alphas[t], coefs[t], objs[t], iters[t] = alpha, phi, f, it
        alpha, phi = alpha.copy(), phi.copy()
    return SoftmaxPath(lambdas, alphas, coefs, objs, iters)


def softmax_deviance(C, q) -> float:
    """Mean per-document multinomial deviance."""
    C = np.asarray(C, dtype=np.float64)
    m = C.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(C > 0, C * np.log(C / (m * q)), 0.0)
    return float(2.0 * terms.sum() / len(C))


def softmax_cv(C, V, n_folds: int = 5, seed: int = 0, **kw):
    """Fit the full path, then K-fold CV on its lambda grid.

    Returns (path, mean, se, i_min, i_1se).
    """
    C = np.asarray(C, dtype=np.float64)
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    path = fit_softmax_reference(C, V, **kw)
    kw = {k: v for k, v in kw.items() if k not in ("lambdas", "n_lambda", "lambda_min_ratio")}
    folds = fold_ids(len(C), n_folds, seed)
    table = np.zeros((n_folds, len(path.lambdas)))
    for k in range(n_folds):
        tr, te = folds != k, folds == k
        fp = fit_softmax_reference(C[tr], V[tr], lambdas=path.lambdas, **kw)
        for t in range(len(path.lambdas)):
            table[k, t] = softmax_deviance(C[te], fp.probabilities(t, V[te]))
    mean = table.mean(axis=0)
    se = table.std(axis=0, ddof=1) / np.sqrt(n_folds)
    i_min, i_1se = cv_select(mean, se)
    return path, mean, se, i_min, i_1se
