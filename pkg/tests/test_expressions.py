import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbosc.expressions import (EvaluationError, ExpressionError,
                               parse_expression)


def resolver_from(mapping):
    def resolve(name):
        return mapping[name]
    return resolve


def test_arithmetic():
    assert parse_expression("1 + 2*3").eval(resolver_from({})) == 7.0
    assert parse_expression("(1 + 2) * 3").eval(resolver_from({})) == 9.0
    assert parse_expression("-2 + 1").eval(resolver_from({})) == -1.0
    assert parse_expression("4 / 2 - 3").eval(resolver_from({})) == -1.0


def test_norm_comparison_three_four_five():
    expr = parse_expression("norm(rightHandPosition.error) < 0.01")
    value = expr.eval(resolver_from(
        {"rightHandPosition.error": np.array([0.3, 0.4, 0.0])}))
    assert value is False
    assert expr.eval(resolver_from(
        {"rightHandPosition.error": np.array([0.001, 0.0, 0.0])})) is True


def test_syntax_error_offset():
    with pytest.raises(ExpressionError) as err:
        parse_expression("a && (b")
    assert err.value.offset == 8


def test_logical_operators():
    r = resolver_from({"a": 1.0, "b": 0.0, "flag": True})
    assert parse_expression("a && !b").eval(r) is True
    assert parse_expression("b || flag").eval(r) is True
    assert parse_expression("!(a || b)").eval(r) is False
    assert parse_expression("a > 0.5 && b <= 0").eval(r) is True
    assert parse_expression("a != b").eval(r) is True
    assert parse_expression("abs(0 - a) == 1").eval(r) is True


def test_unresolved_name_raises_evaluation_error():
    expr = parse_expression("ghost.value > 0")
    with pytest.raises(EvaluationError):
        expr.eval(resolver_from({}))


def test_vector_outside_norm_rejected_at_eval():
    expr = parse_expression("v + 1")
    with pytest.raises(EvaluationError):
        expr.eval(resolver_from({"v": np.array([1.0, 2.0])}))


def test_variables_reported():
    expr = parse_expression("x.a < y.b && norm(z.c) > 0")
    assert expr.variables == ("x.a", "y.b", "z.c")


def test_unknown_function():
    with pytest.raises(ExpressionError):
        parse_expression("sqrt(4)")


@settings(max_examples=60, deadline=None)
@given(st.integers(-50, 50), st.integers(-50, 50), st.integers(1, 50))
def test_matches_python_semantics(a, b, c):
    r = resolver_from({"a": float(a), "b": float(b), "c": float(c)})
    cases = [
        ("a + b*c", a + b * c),
        ("(a + b) / c", (a + b) / c),
        ("a - -b", a - -b),
        ("a < b || a == b", a < b or a == b),
        ("abs(a - b) >= c", abs(a - b) >= c),
    ]
    for text, expected in cases:
        got = parse_expression(text).eval(r)
        if isinstance(expected, bool):
            assert got == expected
        else:
            assert got == pytest.approx(float(expected))
