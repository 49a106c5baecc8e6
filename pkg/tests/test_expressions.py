from __future__ import annotations

import numpy as np
import pytest

from hjsys.errors import ExpressionSyntaxError
from hjsys.expressions import parse_expression


def test_cosine_well_vanishes_at_origin():
    assert parse_expression("1 - cos(2*pi*x)")(0.0) == 0.0


def test_unclosed_call_position():
    with pytest.raises(ExpressionSyntaxError) as err:
        parse_expression("abs(")
    assert err.value.position == 4
    assert isinstance(err.value, SyntaxError)


def test_min():
    assert parse_expression("min(x, 1-x)")(0.25) == 0.25


@pytest.mark.parametrize("text, x, y, want", [
    ("-x + 2*y", 1.0, 3.0, 5.0),
    ("max(x, y, 7)", 1.0, 3.0, 7.0),
    ("abs(-2) * sin(pi/2)", 0.0, None, 2.0),
    ("2 - 3 - 4", 0.0, None, -5.0),
    ("8 / 2 / 2", 0.0, None, 2.0),
    ("1e-3 * 1000", 0.0, None, 1.0),
    ("--x", 2.0, None, 2.0),
])
def test_values(text, x, y, want):
    assert parse_expression(text)(x, y) == pytest.approx(want)


def test_division_by_zero_is_zero():
    np.testing.assert_array_equal(parse_expression("1 / x")(np.array([0.0, 2.0])), [0.0, 0.5])


def test_vectorized_shape():
    x, y = np.meshgrid(np.arange(3.0), np.arange(4.0), indexing="ij")
    assert parse_expression("x*y")(x, y).shape == (3, 4)
    assert parse_expression("2")(x).shape == (3, 4)


@pytest.mark.parametrize("text, pos", [("1 +", 3), ("foo(x)", 0), ("x $ 2", 2), ("sin(x, y)", 0), ("(x", 2),
                                      ("min(x)", 0), ("x y", 2)])
def test_errors_carry_position(text, pos):
    with pytest.raises(ExpressionSyntaxError) as err:
        parse_expression(text)
    assert err.value.position == pos


def test_unbound_y():
    with pytest.raises(ValueError):
        parse_expression("y")(1.0)
