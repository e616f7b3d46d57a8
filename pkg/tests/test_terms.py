from __future__ import annotations

import numpy as np
import pytest

from fortify.errors import ConstraintError, ShapeError
from fortify.terms import design, parse_term, parse_terms

from conftest import tiny_data


@pytest.mark.parametrize("text", ["A", "W1", "A*X2", "Z1^2", "W1*abs(X1)^0.5", "1"])
def test_label_round_trip(text):
    assert parse_term(text).label == text


def test_evaluate_products():
    data = tiny_data(n=10, k=2, d_w=1, p=2, seed=3)
    np.testing.assert_allclose(parse_term("A*X2").evaluate(data), data.a * data.x[:, 1])
    np.testing.assert_allclose(parse_term("W1*abs(X1)^0.5").evaluate(data),
                               data.w[:, 0] * np.sqrt(np.abs(data.x[:, 0])))
    np.testing.assert_allclose(parse_term("A*W1").evaluate(data, a=1.0), data.w[:, 0])
    np.testing.assert_allclose(parse_term("1").evaluate(data), np.ones(10))


def test_design_matrix_columns():
    data = tiny_data(n=8)
    m = design(parse_terms(["A", "Z2"]), data, a=0.0)
    np.testing.assert_array_equal(m[:, 0], 0.0)
    np.testing.assert_array_equal(m[:, 1], data.z[:, 1])


@pytest.mark.parametrize("bad", ["", "Q1", "A1", "Z0", "Z", "W1**2"])
def test_bad_terms(bad):
    with pytest.raises(ConstraintError):
        parse_term(bad)


def test_duplicates_rejected():
    with pytest.raises(ConstraintError):
        parse_terms(["A", "A"])


def test_missing_column():
    with pytest.raises(ShapeError):
        parse_term("Z3").evaluate(tiny_data())


def test_support_and_substitute():
    t = parse_term("Z1*Z2*X1")
    assert t.z_support == frozenset({1, 2})
    sq = t.substitute("Z", lambda f: [type(f)(f.var, f.index, 2.0)])
    assert sq.label == "Z1^2*Z2^2*X1"
