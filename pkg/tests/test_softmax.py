import numpy as np
import pytest

from dmr import glm
from dmr.engine import fit_dmr
from dmr.errors import CapExceeded
from dmr.experiment import fit_dmr_rules, oos_experiment
from dmr.simulate import glass_like, multinomial_counts
from dmr.softmax import fit_softmax_reference, softmax_deviance

import helpers as H
import oracles


def test_two_categories_is_penalized_logistic():
    rng = np.random.default_rng(0)
    n, p = 60, 3
    V = rng.normal(size=(n, p))
    m = rng.integers(1, 6, size=n)
    pr = 1 / (1 + np.exp(-(0.3 + V @ np.array([1.0, -0.5, 0.0]))))
    y = rng.binomial(m, pr)
    C = np.column_stack([m - y, y]).astype(float)
    lam = 0.02
    path = fit_softmax_reference(C, V, lambdas=[lam], tol=1e-13, max_iter=200_000)
    beta = path.coefs[0][:, 1] - path.coefs[0][:, 0]
    a, b = oracles.logistic_lasso(y.astype(float), m.astype(float), V, n * lam)
    np.testing.assert_allclose(beta, b, atol=1e-5)
    assert path.alphas[0][1] - path.alphas[0][0] == pytest.approx(a, abs=1e-5)


def test_unpenalized_matches_newton_mle():
    rng = np.random.default_rng(1)
    n, d, p = 30, 3, 2
    V = rng.normal(size=(n, p))
    C = rng.multinomial(4, [0.3, 0.3, 0.4], size=n).astype(float)
    path = fit_softmax_reference(C, V, lambdas=[0.0], tol=1e-14, max_iter=500_000)
    np.testing.assert_allclose(path.probabilities(0, V), oracles.newton_multinomial(C, V), atol=1e-6)


def test_intercept_only_agrees_with_dmr():
    rng = np.random.default_rng(2)
    sc, V = H.intercept_only_case(rng)
    ref = fit_softmax_reference(sc.to_dense(), V, lambdas=[0.0], tol=1e-14, max_iter=100_000)
    model = fit_dmr(sc, H.attrs_of(V))
    np.testing.assert_allclose(ref.probabilities(0, V), model.probabilities(V), atol=1e-9)


def test_size_cap():
    with pytest.raises(CapExceeded):
        fit_softmax_reference(np.ones((3, 200)), np.ones((3, 60)))


def test_deviance_of_perfect_prediction_is_zero():
    C = np.array([[2.0, 0.0], [0.0, 3.0]])
    assert softmax_deviance(C, np.array([[1.0, 0.0], [0.0, 1.0]])) == 0.0


def test_oos_aicc_close_to_generating_model():
    sim = multinomial_counts(400, 12, 3, seed=8, mean_length=30, signal=0.5, density=0.5)
    res = oos_experiment(sim.counts, sim.attrs, n_folds=5, rules=["aicc"], softmax=False)
    C = sim.counts.to_dense()
    folds = glm.fold_ids(sim.counts.n_docs, 5, 0)
    truth = [softmax_deviance(C[folds == k], sim.extra["q"][folds == k]) for k in range(5)]
    got = res.samples("dmr.aicc")
    assert abs(got.mean() - np.mean(truth)) <= 0.10 * np.mean(truth)


def test_oos_tables_are_reproducible():
    onehot, attrs = glass_like()
    kw = dict(n_folds=3, rules=["aicc", "cv1se"], inner_folds=3, softmax=True)
    a = oos_experiment(onehot, attrs, **kw)
    b = oos_experiment(onehot, attrs, **kw)
    assert a.table() == b.table()
    assert len(a.records) == 3 * 4
    assert a.labels() == ["dmr.aicc", "dmr.cv1se", "softmax.cvmin", "softmax.cv1se"]


def test_rules_share_one_path_fit():
    sim = multinomial_counts(60, 5, 2, seed=1)
    models = fit_dmr_rules(sim.counts, sim.attrs, glm.PathConfig(), ["aicc", "cvmin"], 3, 0)
    ref = fit_dmr(sim.counts, sim.attrs)
    assert models["aicc"].loadings.nnz == ref.loadings.nnz
    np.testing.assert_array_equal(models["aicc"].intercepts, ref.intercepts)
