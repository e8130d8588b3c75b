import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ascapower.decompose import (
    EffectDecomposition,
    LeastSquares,
    RankDeficiencyWarning,
    asca_table,
    batch_ss,
    decompose,
    f_ratios,
    f_statistic,
    fit,
)
from ascapower.design import (
    CodingMatrix,
    DesignModel,
    FactorSpec,
    ReplicationPlan,
    build_coding_matrix,
    build_run_table,
    degrees_of_freedom,
    make_run_table,
)

# SumSq and df columns of the published ASCA tables
TABLE_1 = {"Mean": (1.3861, 1), "A": (3.4739, 3), "B": (2.184, 2), "C": (12.6117, 12),
           "AB": (6.1738, 6), "Residuals": (23.9712, 24)}
TABLE_B4 = {"Mean": (1.6665, 1), "A": (4.0614, 3), "B": (2.6655, 2), "C": (29.0265, 28),
            "AB": (6.1566, 6), "Residuals": (56.1816, 56)}


def published(table, model, n_runs):
    """EffectDecomposition carrying only the bookkeeping of a printed table."""
    ss = {e: table[e][0] for e in ("A", "B", "C", "AB")}
    dof = {e: table[e][1] for e in ("A", "B", "C", "AB")}
    return EffectDecomposition(
        mean=None, effects={}, residual=None, ss=ss, dof=dof,
        residual_ss=table["Residuals"][0], residual_dof=table["Residuals"][1],
        mean_ss=table["Mean"][0], total_ss=sum(v[0] for v in table.values()),
        n_runs=n_runs, order=list(model.effect_ids),
    )


def test_consistent_system_is_recovered(ref_coding, rng):
    theta0 = rng.standard_normal((ref_coding.n_columns, 5))
    X = ref_coding.matrix @ theta0
    res = fit(X, ref_coding)
    np.testing.assert_allclose(res.theta, theta0, atol=1e-10)
    np.testing.assert_allclose(res.residual, 0, atol=1e-10)
    assert res.full_rank and res.condition < 1e3


def test_constant_columns_go_to_intercept(ref_coding):
    X = np.tile([2.0, -1.5, 7.0], (48, 1))
    res = fit(X, ref_coding)
    np.testing.assert_allclose(res.theta[0], [2.0, -1.5, 7.0], atol=1e-12)
    np.testing.assert_allclose(res.theta[1:], 0, atol=1e-12)


def test_one_factor_effect_equals_cell_means(rng):
    m = DesignModel((FactorSpec("A", 3),))
    t = build_run_table(m, ReplicationPlan.whole(4))
    X = rng.standard_normal((12, 4))
    dec = decompose(X, build_coding_matrix(t), m, degrees_of_freedom(m, t))
    a = t.column("A")
    grand = X.mean(axis=0)
    oracle = np.array([X[a == lvl].mean(axis=0) - grand for lvl in a])
    np.testing.assert_allclose(dec.effects["A"], oracle, atol=1e-12)
    np.testing.assert_allclose(dec.mean, np.tile(grand, (12, 1)), atol=1e-12)


def test_zero_data(ref_model, ref_coding, ref_dof):
    dec = decompose(np.zeros((48, 3)), ref_coding, ref_model, ref_dof)
    assert all(v == 0 for v in dec.ss.values())
    assert dec.residual_ss == 0 and dec.mean_ss == 0
    tab = asca_table(dec, ref_model, f_ratios(dec, ref_model))
    assert tab.degenerate
    assert all(r.perc == 0 for r in tab.rows)
    assert all(r.f is None for r in tab.rows)


def test_dimension_mismatch(ref_coding):
    with pytest.raises(ValueError):
        fit(np.zeros((47, 2)), ref_coding)


def test_rank_deficiency_is_reported(rng):
    D = np.column_stack([np.ones(6), [1, 1, 0, 0, -1, -1], [1, 1, 0, 0, -1, -1]]).astype(float)
    coding = CodingMatrix(D, {"A": slice(1, 2), "B": slice(2, 3)})
    X = rng.standard_normal((6, 2))
    with pytest.warns(RankDeficiencyWarning):
        res = fit(X, coding)
    assert res.rank == 2
    # minimum norm splits the shared direction evenly
    np.testing.assert_allclose(res.theta[1], res.theta[2])
    np.testing.assert_allclose(res.theta, np.linalg.lstsq(D, X, rcond=None)[0], atol=1e-12)


def test_additivity_and_total(ref_model, ref_coding, ref_dof, rng):
    X = rng.standard_normal((48, 20)) + 3.0
    dec = decompose(X, ref_coding, ref_model, ref_dof)
    err = np.linalg.norm(dec.reconstruct() - X) / np.linalg.norm(X)
    assert err < 1e-8
    parts = dec.mean_ss + sum(dec.ss.values()) + dec.residual_ss
    assert parts == pytest.approx(dec.total_ss, rel=1e-8)
    for e, m in dec.effects.items():
        assert dec.ss[e] == pytest.approx(np.sum(m ** 2))
        assert dec.ms[e] == pytest.approx(dec.ss[e] / dec.dof[e])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6), st.floats(0.01, 1e3))
def test_additivity_property(seed, m, scale):
    model = DesignModel(
        (FactorSpec("A", 3), FactorSpec("B", 2), FactorSpec("C", 2, nested_in=("A",))),
    )
    t = build_run_table(model, ReplicationPlan.whole(2))
    X = scale * np.random.default_rng(seed).standard_normal((t.n_runs, m))
    dec = decompose(X, build_coding_matrix(t), model, degrees_of_freedom(model, t))
    assert np.linalg.norm(dec.reconstruct() - X) <= 1e-8 * np.linalg.norm(X)


def test_idempotence(ref_model, ref_coding, ref_dof, rng):
    X = rng.standard_normal((48, 6))
    dec = decompose(X, ref_coding, ref_model, ref_dof)
    for e in ref_model.effect_ids:
        again = decompose(dec.effects[e], ref_coding, ref_model, ref_dof)
        assert again.ss[e] == pytest.approx(dec.ss[e], rel=1e-10)
        assert again.residual_ss < 1e-20
        for other in ref_model.effect_ids:
            if other != e:
                assert again.ss[other] < 1e-20


def test_total_ss_is_permutation_invariant(ref_model, ref_coding, ref_dof, rng):
    X = rng.standard_normal((48, 4))
    a = decompose(X, ref_coding, ref_model, ref_dof)
    b = decompose(X[rng.permutation(48)], ref_coding, ref_model, ref_dof)
    assert a.total_ss == pytest.approx(b.total_ss, rel=1e-12)
    sa = a.mean_ss + sum(a.ss.values()) + a.residual_ss
    sb = b.mean_ss + sum(b.ss.values()) + b.residual_ss
    assert sa == pytest.approx(sb, rel=1e-10)


def test_effect_ss_independent_of_contrast_reference_level(ref_model, ref_table, ref_dof, rng):
    X = rng.standard_normal((48, 5))
    base = decompose(X, build_coding_matrix(ref_table), ref_model, ref_dof)
    levels = ref_table.levels.copy()
    relabel_a = np.array([2, 0, 3, 1])
    relabel_b = np.array([1, 2, 0])
    relabel_c = np.array([3, 1, 0, 2])
    a_new = relabel_a[levels[:, 0]]
    levels[:, 2] = a_new * 4 + relabel_c[levels[:, 2] % 4]
    levels[:, 0] = a_new
    levels[:, 1] = relabel_b[levels[:, 1]]
    t2 = make_run_table(ref_model, levels)
    other = decompose(X, build_coding_matrix(t2), ref_model, ref_dof)
    for e in ref_model.effect_ids:
        assert other.ss[e] == pytest.approx(base.ss[e], rel=1e-10)
    assert other.residual_ss == pytest.approx(base.residual_ss, rel=1e-10)


def test_batch_ss_matches_decompose(ref_model, ref_coding, ref_dof, rng):
    Xs = rng.standard_normal((5, 48, 7))
    ss, rss = batch_ss(LeastSquares(ref_coding), Xs)
    for k in range(5):
        dec = decompose(Xs[k], ref_coding, ref_model, ref_dof)
        for e in ref_model.effect_ids:
            assert ss[e][k] == pytest.approx(dec.ss[e], rel=1e-10)
        assert rss[k] == pytest.approx(dec.residual_ss, rel=1e-10)


def test_published_f_ratios(ref_model):
    f = f_ratios(published(TABLE_1, ref_model, 48), ref_model)
    assert f["A"] == pytest.approx(1.1096, abs=1e-3)
    assert f["B"] == pytest.approx(1.0613, abs=1e-3)
    assert f["C"] == pytest.approx(1.0522, abs=1e-3)
    assert f["AB"] == pytest.approx(1.0302, abs=1e-3)


def test_f_denominators_follow_hierarchy(ref_model, ref_dof):
    ss = {"A": 6.0, "B": 4.0, "C": 24.0, "AB": 12.0}
    f = f_statistic(ss, 48.0, ref_dof, ref_model)
    assert f["A"] == pytest.approx((6 / 3) / ((24 + 12) / 18))
    assert f["B"] == pytest.approx((4 / 2) / (12 / 6))
    assert f["C"] == pytest.approx((24 / 12) / 2.0)
    assert f["AB"] == pytest.approx((12 / 6) / 2.0)


def test_undefined_f_is_none(ref_model):
    dec = published(TABLE_1, ref_model, 48)
    dec.ss["AB"] = 0.0
    dec.ss["C"] = 0.0
    f = f_ratios(dec, ref_model)
    assert f["A"] is None
    assert f["B"] is None
    assert f["C"] == 0.0


def test_asca_table_published(ref_model):
    dec = published(TABLE_1, ref_model, 48)
    tab = asca_table(dec, ref_model, f_ratios(dec, ref_model))
    assert [r.source for r in tab.rows] == ["Mean", "A", "B", "C(A)", "AB", "Residuals", "Total"]
    assert tab.row("Residuals").perc == pytest.approx(48.1342, abs=1e-3)
    assert tab.row("Total").ss == pytest.approx(49.8006, abs=2e-4)
    assert tab.row("Total").df == 48
    assert tab.row("Total").ms == pytest.approx(1.0375, abs=1e-4)
    assert tab.row("A").ms == pytest.approx(1.158, abs=1e-3)
    assert sum(r.perc for r in tab.rows[:-1]) == pytest.approx(100.0)


def test_asca_table_b4_dfs():
    from ascapower.design import reference_model

    model = reference_model(reps_c=8)
    tab = asca_table(published(TABLE_B4, model, 96), model)
    assert tab.row("Total").df == 96
    assert tab.row("Residuals").df == 56


def test_asca_table_csv(ref_model):
    dec = published(TABLE_1, ref_model, 48)
    tab = asca_table(dec, ref_model, f_ratios(dec, ref_model), {"A": 10 / 1001, "B": 146 / 1001})
    rows = list(csv.reader(io.StringIO(tab.to_csv())))
    assert rows[0] == ["Source", "SumSq", "PercSumSq", "df", "MeanSq", "F", "Pvalue"]
    assert rows[1][0] == "Mean" and rows[1][5] == "" and rows[1][6] == ""
    assert rows[2][6] == "0.00999001"
    assert rows[3][6] == "0.145854"
    assert rows[4][6] == ""  # no p-value supplied for C(A)
    assert "nan" not in tab.to_csv().lower()
