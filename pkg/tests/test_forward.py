import numpy as np
import pytest
import scipy.sparse as sp

from dmr import glm
from dmr.counts import AttributeTable, counts_from_matrix
from dmr.errors import DimensionFirewall, InvalidSpec, MissingProjection, RankDeficientControls, ShapeMismatch
from dmr.forward import (
    TreatmentSpec,
    estimate_treatment_effect,
    fit_forward,
    forward_design,
    interaction_block,
    r_squared,
    treatment_path,
)
from dmr.projection import SrProjection
from dmr.simulate import confounded_text


def linear_case(n=2000, slope=2.0, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=n)
    other = rng.normal(size=n)
    y = slope * z + 0.5 * other + rng.normal(size=n)
    attrs = AttributeTable(("y", "w"), np.column_stack([y, other]), ("target", "target"))
    proj = SrProjection(np.column_stack([z, rng.normal(size=n)]), np.full(n, 50.0), False, ("y", "w"))
    return attrs, proj, z


def test_design_columns_and_order():
    attrs, proj, z = linear_case(n=20)
    X, names = forward_design(attrs, proj.m, z, "y")
    assert names == ("w", "m", "z_y")
    np.testing.assert_array_equal(X[:, 0], attrs.column("w"))
    np.testing.assert_array_equal(X[:, 2], z)


def test_recovers_slope_within_three_se():
    attrs, proj, z = linear_case()
    fm = fit_forward(proj, attrs, proj.m, "y")
    resid = attrs.column("y") - fm.predict(forward_design(attrs, proj.m, z, "y")[0])
    se = resid.std() / np.sqrt(np.sum((z - z.mean()) ** 2))
    assert abs(fm.coefficient("z_y") - 2.0) < 3 * se
    assert fm.coefficient("m") == 0.0  # constant length


def test_zero_projection_gets_zero_coefficient():
    attrs, proj, _ = linear_case(n=200)
    flat = SrProjection(np.zeros_like(proj.z), proj.m, False, proj.attribute_names)
    fm = fit_forward(flat, attrs, proj.m, "y")
    assert fm.coefficient("z_y") == 0.0


def test_firewall_rejects_counts():
    attrs, proj, z = linear_case(n=10)
    C = counts_from_matrix(np.ones((10, 3), dtype=int))
    with pytest.raises(DimensionFirewall):
        forward_design(attrs, proj.m, C, "y")
    with pytest.raises(DimensionFirewall):
        forward_design(attrs, proj.m, sp.csr_matrix(np.ones((10, 1))), "y")
    with pytest.raises(DimensionFirewall):
        forward_design(attrs, proj.m, np.ones((10, 2)), "y")
    with pytest.raises(ShapeMismatch):
        forward_design(attrs, proj.m, z[:5], "y")


def test_missing_projection():
    attrs, proj, _ = linear_case(n=50)
    only_w = SrProjection(proj.z[:, 1:], proj.m, False, ("w",))
    with pytest.raises(MissingProjection):
        fit_forward(only_w, attrs, proj.m, "y")


def test_predict_checks_layout():
    attrs, proj, z = linear_case(n=100)
    fm = fit_forward(proj, attrs, proj.m, "y")
    X, cols = forward_design(attrs, proj.m, z, "y")
    np.testing.assert_array_equal(fm.predict(X, cols), fm.predict(X))
    with pytest.raises(ShapeMismatch):
        fm.predict(X[:, ::-1], cols[::-1])
    with pytest.raises(ShapeMismatch):
        fm.predict(X[:, :2])


def test_r_squared():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0


def test_treatment_path_matches_ols_with_strong_signal():
    rng = np.random.default_rng(4)
    n = 500
    W = rng.normal(size=(n, 3))
    t = W @ [0.5, -0.2, 0.1] + rng.normal(size=n)
    y = 1.5 * t + W @ [1.0, 2.0, -1.0] + rng.normal(size=n)
    est, _, ridge, q = treatment_path(y, t, W, glm.PathConfig(gamma=10.0))
    ols = np.linalg.lstsq(np.column_stack([np.ones(n), W, t]), y, rcond=None)[0][-1]
    assert ridge == 0.0 and q == 3
    assert est == pytest.approx(ols, rel=1e-3)


def test_treatment_path_null_effect_is_zero():
    rng = np.random.default_rng(5)
    n = 400
    t, y = rng.normal(size=n), rng.normal(size=n)
    est, *_ = treatment_path(y, t, None, glm.PathConfig(gamma=10.0))
    assert est == 0.0


def test_rank_deficient_controls():
    rng = np.random.default_rng(6)
    n = 100
    w = rng.normal(size=n)
    W = np.column_stack([w, 2 * w])
    t, y = rng.normal(size=n), rng.normal(size=n)
    with pytest.raises(RankDeficientControls):
        treatment_path(y, t, W, glm.PathConfig(), strict=True)
    _, _, ridge, _ = treatment_path(y, t, W, glm.PathConfig())
    assert ridge > 0


def test_spec_validation():
    attrs = AttributeTable(("y", "t", "g"), np.zeros((3, 3)) + np.arange(3)[:, None], ("target",) * 3)
    with pytest.raises(InvalidSpec):
        TreatmentSpec("y", "y").validate(attrs)
    with pytest.raises(InvalidSpec):
        TreatmentSpec("y", "nope").validate(attrs)
    with pytest.raises(InvalidSpec):
        TreatmentSpec("y", "t", attribute_controls=("y",)).validate(attrs)
    with pytest.raises(InvalidSpec):
        TreatmentSpec("y", "t", on_rank_deficient="ignore").validate(attrs)
    assert TreatmentSpec("y", "t").controls(attrs) == ["g"]


def test_interaction_block_is_full_dummy():
    block = np.arange(12, dtype=float).reshape(4, 3)
    codes = np.array([0, 2, 2, 5])
    out = interaction_block(block, codes)
    assert out.shape == (4, 9)
    for i, lv in enumerate([0, 1, 1, 2]):
        np.testing.assert_array_equal(out[i, 3 * lv:3 * lv + 3], block[i])
        assert np.count_nonzero(out[i]) == np.count_nonzero(block[i])
    np.testing.assert_array_equal(out.reshape(4, 3, 3).sum(axis=1), block)


def test_effects_agree_without_confounding():
    sim = confounded_text(n=600, d=40, seed=11, confounding=0.0)
    table = estimate_treatment_effect(TreatmentSpec("y", "t"), sim.counts, sim.attrs)
    est = table.estimates()
    assert set(est) == {"marginal", "attributes", "attributes+sr"}
    assert abs(est["marginal"] - 0.3) < 0.1
    assert abs(est["attributes+sr"] - est["marginal"]) < 0.1
    assert table.provenance["interaction_coding"] == "full dummy"
    lines = table.format().splitlines()
    assert lines[0].split("\t")[1:] == ["marginal", "attributes", "attributes+sr"]
    assert lines[1].startswith("effect\t")


def test_sr_controls_remove_confounding():
    sim = confounded_text(n=1000, d=100, seed=3)
    est = estimate_treatment_effect(TreatmentSpec("y", "t"), sim.counts, sim.attrs).estimates()
    assert est["marginal"] > 0.6
    assert abs(est["attributes+sr"] - 0.3) < 0.2
