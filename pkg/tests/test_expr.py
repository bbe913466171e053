import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikehom.expr import (BinOp, Call, EvaluationError, ExpressionError, Neg, Num, Var,
                           parse_expression, to_source)


def test_literal_zero():
    p = parse_expression("0")
    assert p(t=1.0, x=2.0, z=3.0) == 0.0
    assert p.variables == set()


def test_sine_at_half():
    p = parse_expression("sin(3.141592653589793*x)")
    assert abs(p(x=0.5) - 1.0) <= 1e-12


def test_arithmetic():
    assert parse_expression("2*t + x^2")(t=1, x=3) == 11.0


@pytest.mark.parametrize("src,expected", [
    ("2^3^2", 512.0),          # right associative
    ("-2^2", -4.0),            # unary minus binds looser than power
    ("1 - 2 - 3", -4.0),       # left associative
    ("8 / 4 / 2", 1.0),
    ("min(3, x) + max(1, 2)", 2.0 + 2.0),
    ("sqrt(16) + abs(-1) + exp(0) + cos(0)", 7.0),
    ("1.5e1 + .5", 15.5),
])
def test_precedence_and_functions(src, expected):
    assert parse_expression(src)(x=2.0) == pytest.approx(expected, abs=1e-15)


def test_vectorized_broadcast():
    p = parse_expression("t + x*z")
    out = p(t=np.zeros((3, 1)), x=np.ones((1, 4)), z=2.0)
    assert out.shape == (3, 4) and np.all(out == 2.0)


@pytest.mark.parametrize("src,offset", [("1 + y", 4), ("sin(x", 5), ("(1 + 2", 6), ("1 + 2)", 5)])
def test_parse_errors_carry_offsets(src, offset):
    with pytest.raises(ExpressionError) as exc:
        parse_expression(src)
    assert exc.value.offset == offset


def test_empty_input():
    with pytest.raises(ExpressionError):
        parse_expression("   ")


def test_unknown_identifier_message():
    with pytest.raises(ExpressionError, match="unknown identifier"):
        parse_expression("foo(x)")


def test_wrong_arity():
    with pytest.raises(ExpressionError):
        parse_expression("min(x)")


def test_division_by_zero_reported():
    with pytest.raises(EvaluationError):
        parse_expression("1 / (x - 1)")(x=1.0)


def test_non_finite_reported():
    with pytest.raises(EvaluationError):
        parse_expression("sqrt(x)")(x=-1.0)
    with pytest.raises(EvaluationError):
        parse_expression("exp(z)")(z=1e6)


# random syntax trees ---------------------------------------------------------

_leaf = st.one_of(
    st.floats(min_value=-10, max_value=10, allow_nan=False).map(lambda v: Num(abs(v))),
    st.sampled_from(["t", "x", "z"]).map(Var),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from(["+", "-", "*"]), children, children).map(lambda a: BinOp(*a)),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda a: Call(a[0], (a[1],))),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(
            lambda a: Call(a[0], (a[1], a[2]))),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(trees)
def test_print_parse_roundtrip_is_identity_on_tree(tree):
    assert parse_expression(to_source(tree)).tree == tree


@settings(max_examples=60, deadline=None)
@given(trees)
def test_roundtrip_evaluates_identically(tree):
    rng = np.random.default_rng(0)
    t, x, z = rng.uniform(-1, 1, (3, 100))
    p = parse_expression(to_source(tree))
    q = parse_expression(p.print())
    try:
        a = p(t=t, x=x, z=z)
    except EvaluationError:
        return
    assert np.max(np.abs(a - q(t=t, x=x, z=z))) <= 1e-14


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_numeric_literal_roundtrip(v):
    assert parse_expression(v)() == pytest.approx(v, rel=0, abs=abs(v) * 1e-15 + 1e-300) or math.isclose(
        parse_expression(v)(), v)
