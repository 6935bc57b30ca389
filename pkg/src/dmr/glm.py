"""Weighted-L1 regularization paths for Poisson and Gaussian regression.

Each segment minimizes

    loss(alpha, beta) + sum_k pen_k |beta_k|,   pen_k = n * lambda * w_k * omega_k

where w_k is the covariate's base weight (1 for targets, 1/tau for
controls) and omega_k is the gamma-lasso weight
``1 / (1 + gamma * |beta_k from the previous segment|)``.

The Poisson loss is ``sum_i exp(off_i + eta_i) - c_i * eta_i`` with
``eta_i = alpha + x_i'beta``. The ``c_i * off_i`` term is dropped, so the
intercept-only, zero-coefficient loss equals ``sum_i exp(off_i)``. The
Gaussian loss is half the residual sum of squares.

Segments are solved by coordinate descent on the IRLS quadratic
approximation (one quadratic for the Gaussian family), with an active-set
loop and a backtracking step that guarantees the penalized objective never
increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from .counts import CONTROL, TARGET
from .errors import DegenerateDf, DidNotConverge, EmptyFold, NonFiniteValue, ShapeMismatch

POISSON = "poisson"
GAUSSIAN = "gaussian"

# solver status codes shared with the compiled kernels
_OK, _MAXITER, _OVERFLOW = 0, 1, 2


@dataclass(frozen=True)
class PathConfig:
    n_lambda: int = 100
    lambda_min_ratio: float = 0.01
    gamma: float = 0.0
    tau: float = 1.0
    tolerance: float = 1e-7
    max_iters: int = 500
    eta_headroom: float = 30.0

    def __post_init__(self):
        if self.n_lambda < 1:
            raise ValueError("n_lambda must be >= 1")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        if not self.gamma >= 0.0:
            raise ValueError("gamma must be >= 0")
        if not self.tau > 0.0:
            raise ValueError("tau must be > 0 (or inf)")
        if not self.tolerance > 0.0 or self.max_iters < 1:
            raise ValueError("tolerance must be > 0 and max_iters >= 1")

    def as_dict(self) -> dict:
        return {
            "n_lambda": self.n_lambda,
            "lambda_min_ratio": self.lambda_min_ratio,
            "gamma": self.gamma,
            "tau": "inf" if math.isinf(self.tau) else self.tau,
            "tolerance": self.tolerance,
            "max_iters": self.max_iters,
            "eta_headroom": self.eta_headroom,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathConfig":
        d = dict(d)
        if "tau" in d:
            d["tau"] = float(d["tau"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GlmPath:
    """One response's regularization path.

    Row t of ``coefs`` and ``penalty_weights`` belongs to ``lambdas[t]``;
    the effective L1 cost on coefficient k is
    ``n_obs * lambdas[t] * penalty_weights[t, k]``.
    """

    family: str
    lambdas: np.ndarray
    alphas: np.ndarray
    coefs: np.ndarray
    penalty_weights: np.ndarray
    df: np.ndarray
    deviance: np.ndarray
    objective: np.ndarray
    aicc: np.ndarray
    n_obs: int
    converged: bool = True
    ridge: np.ndarray | None = None

    @property
    def n_segments(self) -> int:
        return len(self.lambdas)

    def segment(self, t: int) -> tuple[float, dict[int, float]]:
        """Intercept and sparse {covariate: value} dict of segment t."""
        row = self.coefs[t]
        nz = np.flatnonzero(row)
        return float(self.alphas[t]), {int(k): float(row[k]) for k in nz}

    def penalty(self, t: int) -> np.ndarray:
        return self.n_obs * self.lambdas[t] * self.penalty_weights[t]


@dataclass(frozen=True, eq=False)
class CvReport:
    lambdas: np.ndarray
    fold_deviance: np.ndarray  # n_folds x n_lambda, mean per held-out observation
    mean: np.ndarray
    se: np.ndarray
    i_min: int
    i_1se: int
    folds: np.ndarray
    path: GlmPath | None = field(default=None, repr=False)

    def index(self, rule: str) -> int:
        return {"cvmin": self.i_min, "cv1se": self.i_1se}[rule]


# --------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _soft(g, t):
    if g > t:
        return g - t
    if g < -t:
        return g + t
    return 0.0


@numba.njit(cache=True)
def _cd_quadratic(X, z, w, pen, ridge, beta, alpha, fit_intercept, thresh, max_sweeps):
    """Minimize 0.5*sum w (z - alpha - X beta)^2 + sum pen|beta| + 0.5*sum ridge beta^2.

    ``beta`` is updated in place; returns (alpha, status).
    """
    n, p = X.shape
    r = z.copy()
    for i in range(n):
        r[i] -= alpha
    for k in range(p):
        if beta[k] != 0.0:
            for i in range(n):
                r[i] -= X[i, k] * beta[k]
    a = np.zeros(p)
    for k in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, k] * X[i, k]
        a[k] = s + ridge[k]
    sw = 0.0
    for i in range(n):
        sw += w[i]

    active = np.zeros(p, dtype=np.bool_)
    full = True
    for sweep in range(max_sweeps):
        dmax = 0.0
        if fit_intercept and sw > 0.0:
            s = 0.0
            for i in range(n):
                s += w[i] * r[i]
            d = s / sw
            if d != 0.0:
                alpha += d
                for i in range(n):
                    r[i] -= d
                if sw * d * d > dmax:
                    dmax = sw * d * d
        for k in range(p):
            if not full and not active[k]:
                continue
            if a[k] <= 0.0:
                continue
            old = beta[k]
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, k] * r[i]
            g += (a[k] - ridge[k]) * old
            new = _soft(g, pen[k]) / a[k]
            if new != old:
                d = new - old
                for i in range(n):
                    r[i] -= X[i, k] * d
                beta[k] = new
                if a[k] * d * d > dmax:
                    dmax = a[k] * d * d
                active[k] = True
        if dmax <= thresh:
            if full:
                return alpha, 0
            full = True  # active set converged: confirm with a full sweep
        elif full:
            # a full sweep that moved things starts another active-set phase
            full = False
    return alpha, 1


@numba.njit(cache=True)
def _poisson_objective(X, c, off, beta, alpha, pen, eta_cap, eta_out):
    n, p = X.shape
    f = 0.0
    ok = True
    for i in range(n):
        e = alpha
        for k in range(p):
            if beta[k] != 0.0:
                e += X[i, k] * beta[k]
        full = off[i] + e
        eta_out[i] = e
        if full > eta_cap or not np.isfinite(full):
            ok = False
        f += math.exp(full) - c[i] * e
    for k in range(p):
        if beta[k] != 0.0:
            f += pen[k] * abs(beta[k])
    return f, ok


@numba.njit(cache=True)
def _poisson_segment(X, c, off, pen, beta, alpha, tol, max_iter, eta_cap, cd_thresh):
    """IRLS + coordinate descent for one Poisson segment.

    Returns (alpha, objective, status, iterations); ``beta`` updated in place.
    """
    n, p = X.shape
    eta = np.empty(n)
    f, ok = _poisson_objective(X, c, off, beta, alpha, pen, eta_cap, eta)
    if not ok:
        return alpha, f, 2, 0
    sc = 0.0
    for i in range(n):
        sc += c[i]
    w = np.empty(n)
    z = np.empty(n)
    noridge = np.zeros(p)
    b_try = np.empty(p)
    eta_try = np.empty(n)
    for it in range(max_iter):
        for i in range(n):
            mu = math.exp(off[i] + eta[i])
            w[i] = mu
            z[i] = eta[i] + (c[i] - mu) / mu
        b_new = beta.copy()
        a_new, _ = _cd_quadratic(X, z, w, pen, noridge, b_new, alpha, True, cd_thresh, 10000)
        # backtrack along the Newton direction until the objective does not rise
        step = 1.0
        accepted = False
        f_try = f
        a_try = alpha
        for ls in range(60):
            for k in range(p):
                b_try[k] = beta[k] + step * (b_new[k] - beta[k])
            a_try = alpha + step * (a_new - alpha)
            f_try, ok = _poisson_objective(X, c, off, b_try, a_try, pen, eta_cap, eta_try)
            if ok and f_try <= f + 1e-13 * abs(f):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not ok:
                return alpha, f, 2, it
            return alpha, f, 0, it
        # exact intercept given the slopes
        s = 0.0
        for i in range(n):
            s += math.exp(off[i] + eta_try[i] - a_try)
        a_exact = math.log(sc / s)
        f_exact, ok2 = _poisson_objective(X, c, off, b_try, a_exact, pen, eta_cap, eta)
        if ok2 and f_exact <= f_try:
            a_try = a_exact
            f_try = f_exact
        else:
            for i in range(n):
                eta[i] = eta_try[i]
        for k in range(p):
            beta[k] = b_try[k]
        df = f - f_try
        alpha = a_try
        f = f_try
        if df <= tol * (abs(f) + 1.0):
            return alpha, f, 0, it + 1
    return alpha, f, 1, max_iter


# --------------------------------------------------------------------------
# python-level helpers


def _as_design(covariates, n: int) -> np.ndarray:
    X = np.asarray(covariates, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise ShapeMismatch(f"covariates have {X.shape[0]} rows, response has {n}")
    if not np.isfinite(X).all():
        raise NonFiniteValue("covariates must be finite")
    return np.asfortranarray(X)


def base_penalty_weights(partition: Sequence[str] | None, p: int, tau: float) -> np.ndarray:
    """1 for target covariates, 1/tau for controls (0 when tau is infinite)."""
    if partition is None:
        return np.ones(p)
    if len(partition) != p:
        raise ShapeMismatch("penalty partition must have one entry per covariate")
    w = np.ones(p)
    for k, tag in enumerate(partition):
        if tag == CONTROL:
            w[k] = 0.0 if math.isinf(tau) else 1.0 / tau
        elif tag != TARGET:
            raise ValueError(f"unknown partition tag {tag!r}")
    return w


def poisson_objective(alpha, phi, response, covariates, offsets) -> float:
    """Unpenalized Poisson loss ``sum_i exp(mu_i + eta_i) - c_i * eta_i``.

    Observations with ``offsets == -inf`` (empty documents) are skipped.
    Raises NonFiniteValue if ``exp`` overflows.
    """
    c = np.asarray(response, dtype=np.float64)
    off = np.asarray(offsets, dtype=np.float64)
    X = _as_design(covariates, len(c))
    keep = np.isfinite(off)
    eta = alpha + X[keep] @ np.asarray(phi, dtype=np.float64).reshape(-1)
    with np.errstate(over="ignore"):
        mu = np.exp(off[keep] + eta)
    if not np.isfinite(mu).all():
        raise NonFiniteValue("exp(eta) overflowed")
    return float(np.sum(mu - c[keep] * eta))


def poisson_gradient(alpha, phi, response, covariates, offsets) -> tuple[float, np.ndarray]:
    """Gradient of :func:`poisson_objective` in (alpha, phi)."""
    c = np.asarray(response, dtype=np.float64)
    off = np.asarray(offsets, dtype=np.float64)
    X = _as_design(covariates, len(c))
    keep = np.isfinite(off)
    Xk = X[keep]
    resid = np.exp(off[keep] + alpha + Xk @ np.asarray(phi, dtype=np.float64)) - c[keep]
    return float(resid.sum()), Xk.T @ resid


def poisson_deviance(c: np.ndarray, mu: np.ndarray) -> float:
    c = np.asarray(c, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    pos = c > 0
    return float(2.0 * (np.sum(c[pos] * np.log(c[pos] / mu[pos])) - np.sum(c - mu)))


def aicc(deviance: float, df: int, n: int) -> float:
    """Corrected AIC, ``deviance + 2 df n / (n - df - 1)``.

    Raises DegenerateDf when ``df >= n - 1``.
    """
    if df >= n - 1:
        raise DegenerateDf(f"df={df} leaves no residual degrees of freedom at n={n}")
    return float(deviance + 2.0 * df * n / (n - df - 1.0))


def _aicc_or_inf(dev, df, n):
    try:
        return aicc(dev, df, n)
    except DegenerateDf:
        return math.inf


def lambda_grid(lam_max: float, cfg: PathConfig) -> np.ndarray:
    if cfg.n_lambda == 1:
        return np.array([lam_max])
    return lam_max * cfg.lambda_min_ratio ** (np.arange(cfg.n_lambda) / (cfg.n_lambda - 1))


@dataclass
class _Problem:
    family: str
    y: np.ndarray
    X: np.ndarray
    off: np.ndarray
    w_base: np.ndarray
    ridge: np.ndarray
    n: int
    eta_cap: float
    cd_thresh: float
    null_dev: float
    kkt_tol: float = math.inf


def _prepare(family, response, covariates, offsets, w_base, cfg, ridge) -> _Problem:
    y = np.asarray(response, dtype=np.float64).ravel()
    X = _as_design(covariates, len(y))
    p = X.shape[1]
    if family == POISSON:
        off = np.asarray(offsets, dtype=np.float64).ravel()
        if off.shape != y.shape:
            raise ShapeMismatch("offsets must match response length")
        keep = np.isfinite(off)
        if np.isnan(off).any() or (off == np.inf).any():
            raise NonFiniteValue("offsets must be finite or -inf (excluded)")
        if not keep.any():
            raise EmptyFold("no observation has a finite offset")
        if (y < 0).any():
            raise ShapeMismatch("Poisson response must be nonnegative")
        y, X, off = y[keep], np.asfortranarray(X[keep]), off[keep]
        if y.sum() <= 0:
            raise EmptyFold("response has no positive count among included observations")
        mu0 = np.exp(off) * y.sum() / np.exp(off).sum()
        null_dev = poisson_deviance(y, mu0)
        eta_cap = cfg.eta_headroom + off.max()
    else:
        off = np.zeros_like(y)
        null_dev = float(np.sum((y - y.mean()) ** 2))
        eta_cap = math.inf
    n = len(y)
    ridge = np.zeros(p) if ridge is None else np.broadcast_to(np.asarray(ridge, float), (p,)).copy()
    scale = max(null_dev, 1e-3 * max(n, 1)) if family == POISSON else max(null_dev, 1e-12)
    cd_thresh = cfg.tolerance * 1e-3 * scale
    prob = _Problem(family, y, X, off, w_base, ridge, n, eta_cap, cd_thresh, null_dev)
    if family == POISSON:
        # until lambda_1 is known, judge stationarity against the null-model gradient
        g0 = np.abs(X.T @ (y - mu0)).max(initial=0.0)
        prob.kkt_tol = 1e-8 * max(g0, 1e-8 * y.sum())
    return prob


def _kkt_residual(prob: _Problem, pen: np.ndarray, alpha: float, beta: np.ndarray) -> float:
    resid = np.exp(prob.off + alpha + prob.X @ beta) - prob.y
    grad = prob.X.T @ resid
    nz = beta != 0
    viol = np.where(np.isinf(pen), 0.0, np.maximum(np.abs(grad) - pen, 0.0))
    viol[nz] = np.abs(grad[nz] + pen[nz] * np.sign(beta[nz]))
    return float(max(abs(resid.sum()), viol.max(initial=0.0)))


def _solve(prob: _Problem, pen: np.ndarray, beta: np.ndarray, alpha: float, cfg: PathConfig):
    """Solve one segment in place; returns (alpha, objective, status)."""
    if prob.family == POISSON:
        tol, cd_thresh = cfg.tolerance, prob.cd_thresh
        alpha, f, status, _ = _poisson_segment(
            prob.X, prob.y, prob.off, pen, beta, alpha, tol, cfg.max_iters, prob.eta_cap, cd_thresh,
        )
        # an objective-change stop only pins the gradient to ~sqrt(tol); tighten until KKT holds
        for _ in range(6):
            if status != _OK or _kkt_residual(prob, pen, alpha, beta) <= prob.kkt_tol:
                break
            tol, cd_thresh = tol * 1e-2, cd_thresh * 1e-2
            alpha, f, status, _ = _poisson_segment(
                prob.X, prob.y, prob.off, pen, beta, alpha, tol, cfg.max_iters, prob.eta_cap, cd_thresh,
            )
        return alpha, f, status
    ones = np.ones(prob.n)
    alpha, status = _cd_quadratic(
        prob.X, prob.y, ones, pen, prob.ridge, beta, alpha, True,
        prob.cd_thresh, cfg.max_iters * 100,
    )
    r = prob.y - alpha - prob.X @ beta
    nz = beta != 0
    f = 0.5 * r @ r + pen[nz] @ np.abs(beta[nz]) + 0.5 * prob.ridge @ beta**2
    return alpha, float(f), status


def _deviance(prob: _Problem, alpha: float, beta: np.ndarray) -> float:
    eta = alpha + prob.X @ beta
    if prob.family == POISSON:
        return poisson_deviance(prob.y, np.exp(prob.off + eta))
    r = prob.y - eta
    return float(r @ r)


def _criterion(prob: _Problem, dev: float, df: int) -> float:
    if prob.family == POISSON:
        return _aicc_or_inf(dev, df, prob.n)
    # Gaussian with unknown variance: -2 loglik = n log(RSS / n) + const
    rss = max(dev, 1e-300)
    return _aicc_or_inf(prob.n * math.log(rss / prob.n), df, prob.n)


def _null_fit(prob: _Problem, cfg: PathConfig):
    p = prob.X.shape[1]
    pen = np.where(prob.w_base > 0, np.inf, 0.0)
    beta = np.zeros(p)
    if prob.family == POISSON:
        alpha = math.log(prob.y.sum() / np.exp(prob.off).sum())
    else:
        alpha = float(prob.y.mean())
    if (prob.w_base == 0).any():
        alpha, _, status = _solve(prob, pen, beta, alpha, cfg)
        if status == _OVERFLOW:
            raise NonFiniteValue("overflow fitting unpenalized covariates")
        if status != _OK:
            raise DidNotConverge("unpenalized null model did not converge")
    return alpha, beta


def _run_path(prob: _Problem, cfg: PathConfig, lambdas=None) -> GlmPath:
    p = prob.X.shape[1]
    alpha, beta = _null_fit(prob, cfg)
    if lambdas is None:
        eta = alpha + prob.X @ beta
        if prob.family == POISSON:
            resid = prob.y - np.exp(prob.off + eta)
        else:
            resid = prob.y - eta
        grad = np.abs(prob.X.T @ resid)
        pen_cols = prob.w_base > 0
        lam_max = float(np.max(grad[pen_cols] / (prob.n * prob.w_base[pen_cols]))) if pen_cols.any() else 0.0
        if not lam_max > 0.0:
            lam_max = 1.0
        # guard against rounding letting a coefficient in at exactly lambda_1
        lam_max *= 1.0 + 1e-9
        lambdas = lambda_grid(lam_max, cfg)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if prob.family == POISSON and len(lambdas) and lambdas[0] > 0:
        prob.kkt_tol = 1e-6 * prob.n * float(lambdas[0])
    if np.any(np.diff(lambdas) >= 0) or np.any(lambdas < 0):
        raise ValueError("lambdas must be nonnegative and strictly decreasing")

    T = len(lambdas)
    alphas = np.full(T, np.nan)
    coefs = np.zeros((T, p))
    weights = np.zeros((T, p))
    df = np.zeros(T, dtype=np.int64)
    dev = np.full(T, np.nan)
    obj = np.full(T, np.nan)
    crit = np.full(T, np.inf)
    converged = True
    done = 0
    prev = np.zeros(p)
    for t, lam in enumerate(lambdas):
        omega = 1.0 / (1.0 + cfg.gamma * np.abs(prev))
        wt = prob.w_base * omega
        pen = prob.n * lam * wt
        trial = beta.copy()
        a_new, f, status = _solve(prob, pen, trial, alpha, cfg)
        if status == _OVERFLOW:
            if t == 0:
                raise NonFiniteValue("linear predictor exceeded the overflow cap")
            converged = False
            break
        if status != _OK:
            converged = False
            break
        alpha, beta = a_new, trial
        alphas[t] = alpha
        coefs[t] = beta
        weights[t] = wt
        df[t] = 1 + int(np.count_nonzero(beta))
        dev[t] = _deviance(prob, alpha, beta)
        obj[t] = f
        crit[t] = _criterion(prob, dev[t], int(df[t]))
        prev = beta
        done = t + 1
    if done == 0:
        raise DidNotConverge("first path segment did not converge")
    sl = slice(0, done)
    return GlmPath(
        prob.family, lambdas[sl].copy(), alphas[sl], coefs[sl], weights[sl], df[sl],
        dev[sl], obj[sl], crit[sl], prob.n, converged,
        prob.ridge if prob.ridge.any() else None,
    )


def fit_path(
    response,
    covariates,
    offsets,
    penalty_partition: Sequence[str] | None = None,
    cfg: PathConfig = PathConfig(),
    lambdas=None,
) -> GlmPath:
    """Fit a Poisson (log link) gamma-lasso path with fixed offsets.

    Observations whose offset is ``-inf`` are excluded from the likelihood.
    If a segment fails to converge the path is truncated at the last good
    segment and ``converged`` is False.
    """
    y = np.asarray(response, dtype=np.float64).ravel()
    X = _as_design(covariates, len(y))
    w = base_penalty_weights(penalty_partition, X.shape[1], cfg.tau)
    prob = _prepare(POISSON, y, X, offsets, w, cfg, None)
    return _run_path(prob, cfg, lambdas)


def gaussian_fit_path(
    response,
    covariates,
    penalty_partition: Sequence[str] | None = None,
    cfg: PathConfig = PathConfig(),
    lambdas=None,
    unpenalized: Sequence[int] = (),
    ridge=0.0,
) -> GlmPath:
    """Squared-error gamma-lasso path (identity link, no offsets).

    Columns listed in ``unpenalized`` carry no L1 cost at all. ``ridge`` adds
    ``0.5 * ridge_k * beta_k**2`` to the objective, used to stabilize
    collinear unpenalized controls.
    """
    y = np.asarray(response, dtype=np.float64).ravel()
    X = _as_design(covariates, len(y))
    w = base_penalty_weights(penalty_partition, X.shape[1], cfg.tau)
    w[list(unpenalized)] = 0.0
    prob = _prepare(GAUSSIAN, y, X, None, w, cfg, ridge)
    return _run_path(prob, cfg, lambdas)


def fit_segment(
    family: str,
    response,
    covariates,
    offsets,
    penalty: np.ndarray,
    cfg: PathConfig = PathConfig(),
    init: tuple[float, np.ndarray] | None = None,
) -> tuple[float, np.ndarray, float]:
    """Solve a single segment with absolute per-coefficient L1 costs ``penalty``.

    Starts from ``init`` or from zero slopes with the null intercept.
    Returns (alpha, beta, penalized objective).
    """
    y = np.asarray(response, dtype=np.float64).ravel()
    X = _as_design(covariates, len(y))
    prob = _prepare(family, y, X, offsets, np.ones(X.shape[1]), cfg, None)
    if init is None:
        beta = np.zeros(X.shape[1])
        alpha = (
            math.log(prob.y.sum() / np.exp(prob.off).sum()) if family == POISSON else prob.y.mean()
        )
    else:
        alpha, beta = init[0], np.array(init[1], dtype=np.float64)
    alpha, f, status = _solve(prob, np.asarray(penalty, dtype=np.float64), beta, alpha, cfg)
    if status == _OVERFLOW:
        raise NonFiniteValue("linear predictor exceeded the overflow cap")
    if status != _OK:
        raise DidNotConverge("segment did not converge")
    return alpha, beta, f


def kkt_violation(path: GlmPath, t: int, response, covariates, offsets=None) -> float:
    """Largest KKT residual of segment t (intercept included).

    For a zero coefficient the residual is ``max(0, |grad_k| - pen_k)``; for a
    nonzero one it is ``|grad_k + pen_k sign(beta_k)|``.
    """
    y = np.asarray(response, dtype=np.float64).ravel()
    X = _as_design(covariates, len(y))
    alpha, beta = path.alphas[t], path.coefs[t]
    if path.family == POISSON:
        off = np.asarray(offsets, dtype=np.float64)
        keep = np.isfinite(off)
        y, X, off = y[keep], X[keep], off[keep]
        resid = np.exp(off + alpha + X @ beta) - y
    else:
        resid = alpha + X @ beta - y
    grad = X.T @ resid
    if path.ridge is not None:
        grad = grad + path.ridge * beta
    pen = path.penalty(t)
    nz = beta != 0
    viol = np.where(nz, np.abs(grad + pen * np.sign(beta)), np.maximum(np.abs(grad) - pen, 0.0))
    return float(max(abs(resid.sum()), viol.max(initial=0.0)))


# --------------------------------------------------------------------------
# selection and cross-validation


def select_aicc(path: GlmPath) -> int:
    finite = np.isfinite(path.aicc)
    if not finite.any():
        return 0
    return int(np.argmin(np.where(finite, path.aicc, np.inf)))


def cv_select(mean: np.ndarray, se: np.ndarray) -> tuple[int, int]:
    ok = np.isfinite(mean)
    i_min = int(np.argmin(np.where(ok, mean, np.inf)))
    bound = mean[i_min] + (se[i_min] if np.isfinite(se[i_min]) else 0.0)
    # lambdas decrease with index, so the first qualifying index is the largest lambda
    i_1se = int(np.flatnonzero(ok & (mean <= bound))[0])
    return i_min, i_1se


def fold_ids(n: int, n_folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % n_folds
    return folds


def predict_path(path: GlmPath, covariates, offsets=None) -> np.ndarray:
    """Fitted means for every segment: array of shape (n, T)."""
    X = np.asarray(covariates, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    eta = path.alphas[None, :] + X @ path.coefs.T
    if path.family == POISSON:
        return np.exp(np.asarray(offsets, dtype=np.float64)[:, None] + eta)
    return eta


def cross_validate(
    response,
    covariates,
    offsets,
    partition: Sequence[str] | None = None,
    cfg: PathConfig = PathConfig(),
    n_folds: int = 5,
    seed: int = 0,
    family: str = POISSON,
    unpenalized: Sequence[int] = (),
    full_path: GlmPath | None = None,
) -> CvReport:
    """K-fold CV over the lambda grid of the full-data path.

    Fold deviance is the mean deviance per held-out observation (Poisson
    deviance, or squared error for the Gaussian family). Observations with
    ``-inf`` offsets are ignored everywhere.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    y = np.asarray(response, dtype=np.float64).ravel()
    X = _as_design(covariates, len(y))
    if family == POISSON:
        off = np.asarray(offsets, dtype=np.float64).ravel()
    else:
        off = np.zeros_like(y)

    def fit(rows, lambdas=None):
        if family == POISSON:
            return fit_path(y[rows], X[rows], off[rows], partition, cfg, lambdas)
        return gaussian_fit_path(y[rows], X[rows], partition, cfg, lambdas, unpenalized)

    all_rows = np.arange(len(y))
    path = full_path if full_path is not None else fit(all_rows)
    lambdas = path.lambdas
    folds = fold_ids(len(y), n_folds, seed)
    usable = np.isfinite(off)
    table = np.full((n_folds, len(lambdas)), np.nan)
    for k in range(n_folds):
        test = (folds == k) & usable
        train = (folds != k) & usable
        if not test.any() or not train.any():
            raise EmptyFold(f"fold {k} has no usable observations")
        if family == POISSON and y[train].sum() <= 0:
            raise EmptyFold(f"fold {k} training set has no positive count")
        fp = fit(np.flatnonzero(train), lambdas)
        pred = predict_path(fp, X[test], off[test])
        for t in range(fp.n_segments):
            if family == POISSON:
                table[k, t] = poisson_deviance(y[test], pred[:, t]) / test.sum()
            else:
                table[k, t] = float(np.mean((y[test] - pred[:, t]) ** 2))
    with np.errstate(invalid="ignore"):
        cnt = np.sum(np.isfinite(table), axis=0)
        mean = np.nanmean(np.where(cnt[None, :] > 0, table, 0.0), axis=0)
        mean[cnt == 0] = np.nan
        sd = np.array([np.nanstd(table[:, t], ddof=1) if cnt[t] > 1 else np.nan for t in range(len(lambdas))])
        se = sd / np.sqrt(np.maximum(cnt, 1))
    i_min, i_1se = cv_select(mean, se)
    return CvReport(lambdas, table, mean, se, i_min, i_1se, folds, path)


def select(path: GlmPath, rule: str, cv: CvReport | None = None) -> int:
    if rule == "aicc":
        return select_aicc(path)
    if rule in ("cvmin", "cv1se"):
        if cv is None:
            raise ValueError(f"rule {rule!r} needs a CvReport")
        return min(cv.index(rule), path.n_segments - 1)
    raise ValueError(f"unknown selection rule {rule!r}")


def dump_path(path: GlmPath, names: Sequence[str] | None = None) -> str:
    """Diagnostic text dump: ``lambda_index<TAB>covariate<TAB>value`` per nonzero."""
    lines = []
    for t in range(path.n_segments):
        lines.append(f"{t}\t(intercept)\t{float(path.alphas[t])!r}")
        for k in np.flatnonzero(path.coefs[t]):
            label = names[k] if names is not None else str(k)
            lines.append(f"{t}\t{label}\t{float(path.coefs[t, k])!r}")
    return "\n".join(lines) + "\n"
