import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bqrfp.fp_basis import (
    POWER_SET,
    DesignMatrix,
    DomainError,
    FPPowers,
    PredictorSpec,
    box_tidwell,
    build_design,
    expected_columns,
    fp_terms,
    rank_deficient_columns,
    term_labels,
)


@pytest.mark.parametrize("x,a,expected", [(4, 0.5, 2.0), (4, 0, math.log(4)), (2, -2, 0.25)])
def test_box_tidwell_values(x, a, expected):
    assert box_tidwell(x, a) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_box_tidwell_rejects_nonpositive(x):
    with pytest.raises(DomainError):
        box_tidwell(x, 1.0)


def test_repeated_power_chain():
    # the last term is x^2 multiplied by log(x)
    assert fp_terms(4, (-0.5, 2, 2)) == pytest.approx([0.5, 16.0, 16.0 * math.log(4)], rel=1e-14)
    assert fp_terms(math.e, (0, 0)) == pytest.approx([1.0, 1.0], rel=1e-15)
    assert fp_terms(1, (0.5, 0.5)) == [1.0, 0.0]


def test_power_validation():
    with pytest.raises(ValueError):
        FPPowers((0.7,))
    with pytest.raises(ValueError):
        FPPowers((1, 1, 1, 1))
    assert FPPowers((1, 0.5)).powers == (0.5, 1.0)


def test_labels_mark_log_chains():
    assert term_labels("x", FPPowers((-0.5, 2, 2))) == ["x^-0.5", "x^2", "x^2*log(x)"]
    assert term_labels("x", FPPowers((0, 0))) == ["log(x)", "log(x)^2"]


def test_build_design_small_example():
    # powers are stored in canonical sorted order, so the 0.5 column comes first
    d = build_design({"x": [4, 9]}, [PredictorSpec.continuous("x", (1, 0.5))])
    assert d.values.tolist() == [[2.0, 4.0], [3.0, 9.0]]
    assert d.labels == ["x^0.5", "x^1"]


def test_blood_pressure_model_has_seven_columns():
    rng = np.random.default_rng(0)
    n = 40
    rows = {
        "BMI": rng.uniform(15, 50, n),
        "Age": rng.integers(20, 80, n),
        "Ethnicity": rng.integers(1, 6, n),
        "Gender": rng.integers(1, 3, n),
        "Marital": rng.integers(1, 7, n),
    }
    specs = [
        PredictorSpec.continuous("BMI", (0.5, 1)),
        PredictorSpec.continuous("Age", (0.5, 1)),
        PredictorSpec.categorical("Ethnicity"),
        PredictorSpec.categorical("Gender"),
        PredictorSpec.categorical("Marital"),
    ]
    d = build_design(rows, specs)
    assert (d.n, d.D) == (n, 7)
    assert len(set(d.labels)) == 7


def test_omitted_predictor_contributes_nothing():
    d = build_design({"x": [1.0, 2.0], "z": [3, 4]},
                     [PredictorSpec.continuous("x", ()), PredictorSpec.categorical("z")])
    assert d.D == 1 and d.labels == ["z"]


def test_nonpositive_rows_are_listed():
    with pytest.raises(DomainError, match=r"\[1, 2\]"):
        build_design({"x": [4, -1, 0]}, [PredictorSpec.continuous("x", (1,))])


def test_shift_makes_values_positive():
    d = build_design({"x": [-2.0, 0.0, 3.0]}, [PredictorSpec.continuous("x", (1,), shift=True)])
    assert d.values[:, 0].tolist() == [1.0, 3.0, 6.0]


def test_unknown_category_code():
    with pytest.raises(ValueError, match="unknown category"):
        build_design({"z": [1, 2, 5]}, [PredictorSpec.categorical("z", levels=(1, 2, 3))])


def test_dummy_encoding():
    d = build_design({"z": [1, 2, 3, 1]}, [PredictorSpec.categorical("z", encoding="dummy")])
    assert d.D == 2
    assert d.values.tolist() == [[0, 0], [1, 0], [0, 1], [0, 0]]


def test_intercept_flag():
    d = build_design({"x": [1.0, 2.0]}, [PredictorSpec.continuous("x", (1,))], intercept=True)
    assert d.labels[0] == "(Intercept)"
    assert d.values[:, 0].tolist() == [1.0, 1.0]


def test_design_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        DesignMatrix(np.array([[1.0], [np.nan]]), (("x", "x"),))


def test_rank_deficiency_detected():
    B = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.ones(5)])
    assert rank_deficient_columns(B) == [2]


powers_st = st.lists(st.sampled_from(POWER_SET), min_size=0, max_size=3)


@given(x=st.floats(1e-3, 1e3), powers=powers_st)
def test_fp_terms_length(x, powers):
    assert len(fp_terms(x, powers)) == len(powers)


@given(powers=powers_st)
def test_fp_terms_at_one(powers):
    p = sorted(powers)
    out = fp_terms(1.0, p)
    for j, val in enumerate(out):
        repeated = j > 0 and p[j] == p[j - 1]
        if repeated or p[j] == 0:
            assert val == 0.0
        else:
            assert val == 1.0


@settings(max_examples=50)
@given(
    specs=st.lists(
        st.one_of(
            powers_st.map(lambda p: ("c", tuple(p))),
            st.just(("k", None)),
        ),
        min_size=1,
        max_size=5,
    ),
    n=st.integers(1, 20),
)
def test_column_count_identity(specs, n):
    rng = np.random.default_rng(n)
    rows, built = {}, []
    for i, (kind, p) in enumerate(specs):
        name = f"v{i}"
        if kind == "c":
            rows[name] = rng.uniform(0.1, 10, n)
            built.append(PredictorSpec.continuous(name, p))
        else:
            rows[name] = rng.integers(0, 3, n)
            built.append(PredictorSpec.categorical(name))
    d = build_design(rows, built)
    assert d.D == expected_columns(built)
    assert d.D == sum(len(p) for k, p in specs if k == "c") + sum(k == "k" for k, _ in specs)
    # deterministic and row-order preserving
    perm = rng.permutation(n)
    d2 = build_design({k: np.asarray(v)[perm] for k, v in rows.items()}, built)
    np.testing.assert_array_equal(d2.values, d.values[perm])
