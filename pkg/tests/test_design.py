import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ascapower.design import (
    DesignError,
    DesignModel,
    FactorSpec,
    InteractionSpec,
    ReplicationPlan,
    SaturatedDesignError,
    build_coding_matrix,
    build_run_table,
    degrees_of_freedom,
    descendants,
    make_run_table,
    reference_model,
    validate_model,
)


def test_reference_model_is_valid(ref_model):
    assert validate_model(ref_model) == []


def test_single_level_factor_is_reported():
    m = DesignModel((FactorSpec("A", 1), FactorSpec("B", 3)))
    problems = validate_model(m)
    assert len(problems) == 1
    assert "levels ≥ 2" in problems[0]


def test_interaction_with_nested_pair_is_reported():
    m = DesignModel(
        (FactorSpec("A", 4), FactorSpec("C", 4, nested_in=("A",))),
        (InteractionSpec(("A", "C")),),
    )
    assert any("interaction contains nested pair" in p for p in validate_model(m))


@pytest.mark.parametrize(
    "model, fragment",
    [
        (DesignModel((FactorSpec("A", 2), FactorSpec("A", 3))), "duplicated"),
        (DesignModel((FactorSpec("A", 2, nested_in=("Z",)),)), "unknown factor"),
        (DesignModel((FactorSpec("A", 2, nested_in=("B",)), FactorSpec("B", 2, nested_in=("A",)))), "cycle"),
        (DesignModel((FactorSpec("A", 2), FactorSpec("B", 2)), (InteractionSpec(("A", "A")),)), "duplicates"),
        (DesignModel((FactorSpec("A", 2),), residual_coeff=0.0), "residual"),
        (DesignModel((FactorSpec("A", 2, coeff=-1.0),)), "nonnegative"),
    ],
)
def test_violations(model, fragment):
    assert any(fragment in p for p in validate_model(model))


@pytest.mark.parametrize(
    "plan, n_runs",
    [
        (ReplicationPlan.base(), 48),
        (ReplicationPlan.whole(2), 96),
        (ReplicationPlan.enlarge("A", 8), 96),
    ],
)
def test_run_counts(ref_model, plan, n_runs):
    assert build_run_table(ref_model, plan).n_runs == n_runs


def test_enlarged_nested_global_levels(ref_model):
    t = build_run_table(ref_model, ReplicationPlan.enlarge("A", 8))
    assert t.n_levels("C") == 32
    assert t.column("C").max() == 31


def test_run_table_level_ranges_and_nesting(ref_table):
    for name, top in [("A", 4), ("B", 3), ("C", 16)]:
        col = ref_table.column(name)
        assert col.min() == 0 and col.max() == top - 1
    # each global level of C belongs to exactly one level of A
    pairs = {(c, a) for c, a in zip(ref_table.column("C"), ref_table.column("A"))}
    assert len(pairs) == 16


def test_whole_replication_copies_each_run(ref_model, ref_table):
    t = build_run_table(ref_model, ReplicationPlan.whole(3))
    base = [tuple(r) for r in ref_table.levels]
    rows = [tuple(r) for r in t.levels]
    for r in set(base):
        assert rows.count(r) == 3 * base.count(r)


@pytest.mark.parametrize("plan", [ReplicationPlan.whole(0), ReplicationPlan.enlarge("Z", 3)])
def test_bad_plans(ref_model, plan):
    with pytest.raises(DesignError):
        build_run_table(ref_model, plan)


def _sum_code_oracle(values, n):
    cols = []
    for j in range(n - 1):
        cols.append([1.0 if v == j else (-1.0 if v == n - 1 else 0.0) for v in values])
    return np.array(cols).T


def test_coding_column_count(ref_coding):
    assert ref_coding.n_columns == 1 + 3 + 2 + 12 + 6


def test_two_level_factor_is_plus_minus_one():
    m = DesignModel((FactorSpec("A", 2),))
    t = build_run_table(m, ReplicationPlan.whole(3))
    D = build_coding_matrix(t).matrix
    assert D.shape == (6, 2)
    assert np.all(D[:, 0] == 1)
    assert set(D[:, 1]) == {-1.0, 1.0}


def test_interaction_block_is_product_of_factor_blocks(ref_table, ref_coding):
    a = _sum_code_oracle(ref_table.column("A"), 4)
    b = _sum_code_oracle(ref_table.column("B"), 3)
    expected = np.column_stack([a[:, i] * b[:, j] for i in range(3) for j in range(2)])
    np.testing.assert_array_equal(ref_coding.block("AB"), expected)
    np.testing.assert_array_equal(ref_coding.block("A"), a)
    np.testing.assert_array_equal(ref_coding.block("B"), b)


def test_nested_block_is_zero_outside_parent_cell(ref_table, ref_coding):
    block = ref_coding.block("C")
    a = ref_table.column("A")
    for cell in range(4):
        cols = block[:, 3 * cell:3 * cell + 3]
        assert np.all(cols[a != cell] == 0)
        local = ref_table.column("C")[a == cell] % 4
        np.testing.assert_array_equal(cols[a == cell], _sum_code_oracle(local, 4))


def test_coding_rejects_foreign_table(ref_model, ref_table):
    with pytest.raises(DesignError):
        build_coding_matrix(ref_table, ref_model.with_levels("A", 5))


@pytest.mark.parametrize(
    "plan, expected",
    [
        (ReplicationPlan.base(), {"A": 3, "B": 2, "C": 12, "AB": 6, "res": 24, "N": 48}),
        (ReplicationPlan.whole(2), {"A": 3, "B": 2, "C": 12, "AB": 6, "res": 72, "N": 96}),
        (ReplicationPlan.enlarge("A", 8), {"A": 7, "B": 2, "C": 24, "AB": 14, "res": 48, "N": 96}),
        (ReplicationPlan.enlarge("B", 6), {"A": 3, "B": 5, "C": 12, "AB": 15, "res": 60, "N": 96}),
        (ReplicationPlan.enlarge("C", 8), {"A": 3, "B": 2, "C": 28, "AB": 6, "res": 56, "N": 96}),
    ],
)
def test_degrees_of_freedom(ref_model, plan, expected):
    t = build_run_table(ref_model, plan)
    dof = degrees_of_freedom(t.model, t)
    assert dof.effects == {k: expected[k] for k in ("A", "B", "C", "AB")}
    assert dof.residual == expected["res"]
    assert dof.total == expected["N"]


def test_saturated_design():
    m = DesignModel((FactorSpec("A", 3), FactorSpec("B", 2)), (InteractionSpec(("A", "B")),))
    with pytest.raises(SaturatedDesignError):
        degrees_of_freedom(m, build_run_table(m))


def test_descendants(ref_model):
    assert descendants(ref_model, "A") == {"C", "AB"}
    assert descendants(ref_model, "B") == {"AB"}
    assert descendants(ref_model, "AB") == set()
    assert descendants(ref_model, "C") == set()
    with pytest.raises(KeyError):
        descendants(ref_model, "Z")


def test_descendants_of_deeper_hierarchy():
    m = DesignModel(
        (FactorSpec("A", 2), FactorSpec("B", 2), FactorSpec("C", 2, nested_in=("A",)), FactorSpec("D", 2)),
        (InteractionSpec(("A", "B")), InteractionSpec(("B", "C")), InteractionSpec(("A", "B", "D"))),
    )
    assert descendants(m, "A") == {"C", "AB", "BC", "ABD"}
    assert descendants(m, "AB") == {"BC", "ABD"}
    assert descendants(m, "BC") == set()
    # acyclic: nothing is its own descendant, and the relation is antisymmetric
    for e in m.effect_ids:
        below = descendants(m, e)
        assert e not in below
        assert all(e not in descendants(m, d) for d in below)


def test_ingested_table_checks_nesting(ref_model, ref_table):
    levels = ref_table.levels.copy()
    assert make_run_table(ref_model, levels).balanced
    levels[5, 2] = (levels[5, 2] + 4) % 16  # C level from another A cell
    with pytest.raises(DesignError, match="row 6"):
        make_run_table(ref_model, levels)
    levels = ref_table.levels.copy()
    levels[0, 0] = 4
    with pytest.raises(DesignError, match="row 1, column 'A'"):
        make_run_table(ref_model, levels)


@st.composite
def designs(draw):
    la = draw(st.integers(2, 4))
    lb = draw(st.integers(2, 3))
    factors = [FactorSpec("A", la), FactorSpec("B", lb)]
    if draw(st.booleans()):
        factors.append(FactorSpec("C", draw(st.integers(2, 3)), nested_in=("A",)))
    inters = (InteractionSpec(("A", "B")),) if draw(st.booleans()) else ()
    model = DesignModel(tuple(factors), inters)
    eta = draw(st.integers(1, 3))
    if len(factors) == 2 and inters and eta == 1:
        eta = 2
    return model, ReplicationPlan.whole(eta)


@settings(max_examples=40, deadline=None)
@given(designs())
def test_balanced_coding_properties(case):
    model, plan = case
    t = build_run_table(model, plan)
    coding = build_coding_matrix(t)
    np.testing.assert_allclose(coding.matrix[:, 1:].sum(axis=0), 0, atol=1e-12)
    dof = degrees_of_freedom(t.model, t)
    assert sum(dof.effects.values()) + dof.residual + 1 == t.n_runs
    for e, s in coding.spans.items():
        assert s.stop - s.start == dof.effects[e]
    assert np.linalg.matrix_rank(coding.matrix) == coding.n_columns


def test_interaction_cell_index_enumerates_all_cells(ref_table):
    idx = ref_table.index("AB")
    assert np.bincount(idx).tolist() == [4] * 12
    combos = {(a, b) for a, b in itertools.product(range(4), range(3))}
    seen = {(a, b) for a, b in zip(ref_table.column("A"), ref_table.column("B"))}
    assert seen == combos


def test_with_coeffs(ref_model):
    m = ref_model.with_coeffs(B=0.0, residual=2.0)
    assert m.coeff("B") == 0.0 and m.coeff("A") == 0.2 and m.residual_coeff == 2.0
    with pytest.raises(DesignError):
        ref_model.with_coeffs(Z=1.0)
    assert reference_model().label("C") == "C(A)"
