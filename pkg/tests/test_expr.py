import ast
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imdsr import expr as E


def _ast_prefix(text):
    """Independent oracle: Python's own parser, converted to prefix labels."""
    ops = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.BinOp):
            return [ops[type(node.op)]] + walk(node.left) + walk(node.right)
        if isinstance(node, ast.Call):
            return [node.func.id] + walk(node.args[0])
        if isinstance(node, ast.Name):
            return [node.id]
        if isinstance(node, ast.Constant):
            return [E.token_from_label(str(node.value)).label]
        raise AssertionError(node)

    return walk(ast.parse(text, mode="eval"))


def test_parse_single_variable():
    e = E.parse("x1")
    assert e.tokens == (E.Token.var("x1"),)


def test_parse_shipped_vd_prefix():
    e = E.parse("13*x1 - sin(x1 - x4)")
    assert e.labels == ["-", "*", "13", "x1", "sin", "-", "x1", "x4"]
    assert e.labels == _ast_prefix("13*x1 - sin(x1 - x4)")


@pytest.mark.parametrize("text", [
    "x1 + x2 * x3 - x4 / 2",
    "(x1 + x2) * (x3 - x4)",
    "x1 - x2 - x3",
    "x1 / x2 / x3",
    "cos(2*x2) + sin(x1*x1 + 0.5)",
    "12*x2 + x3 + 2*x4 + (x1*x1 + x1 - x2 - x4)*sin(x1)",
])
def test_parse_agrees_with_python_parser(text):
    assert E.parse(text).labels == _ast_prefix(text)


@pytest.mark.parametrize("text,pos", [("sin(", 4), ("x1 +", 4), ("(x1", 3), ("x1 x2", 3),
                                      ("x1 $ 2", 3)])
def test_syntax_errors_report_position(text, pos):
    with pytest.raises(E.ExprSyntaxError) as exc:
        E.parse(text)
    assert exc.value.position == pos


def test_unknown_identifier_and_empty():
    with pytest.raises(E.ExprSyntaxError, match="unknown identifier 'x5'"):
        E.parse("x1 + x5")
    with pytest.raises(E.ExprSyntaxError, match="empty"):
        E.parse("   ")


def test_unary_minus_forms():
    assert E.parse("-2").labels == ["-2"]
    assert E.parse("-x1").labels == ["-", "0", "x1"]
    assert E.parse("-2 * x1").labels == ["*", "-2", "x1"]
    assert E.evaluate(E.parse("-(x1 + 1)"), (2.0, 0, 0, 0)) == -3.0


def test_print_examples():
    assert E.to_text(E.Expression.from_labels(["x1"])) == "x1"
    assert E.to_text(E.Expression.from_labels(["+", "x1", "x2"])) == "(x1 + x2)"
    assert E.to_text(E.Expression.from_labels(["*", "-2.5", "x1"])) == "((-2.5) * x1)"


def test_shipped_law_round_trip():
    for axis in ("vd", "vq"):
        from imdsr.control import _shipped_law_text
        e = E.parse(_shipped_law_text(axis))
        assert E.parse(E.to_text(e)).tokens == e.tokens


_TERMINALS = ["x1", "x2", "x3", "x4", "1", "0.5", "13", "-2", "1e-05", "123456.789"]


@st.composite
def prefix_sequences(draw, max_len=30):
    labels = []
    need = 1
    while need:
        room = max_len - len(labels) - need
        choices = list(_TERMINALS)
        if room >= 1:
            choices += ["sin", "cos"]
        if room >= 1:
            choices += ["+", "-", "*", "/"]
        tok = draw(st.sampled_from(choices))
        labels.append(tok)
        need += E.token_from_label(tok).arity - 1
    return labels


@settings(max_examples=300, deadline=None)
@given(prefix_sequences())
def test_round_trip_property(labels):
    e = E.Expression.from_labels(labels)
    assert E.arity_valid(e.tokens)
    again = E.parse(E.to_text(e))
    assert again.tokens == e.tokens
    assert E.arity_valid(again.tokens)


@settings(max_examples=200, deadline=None)
@given(prefix_sequences(), st.tuples(*[st.floats(-20, 20)] * 4))
def test_eval_total_and_scalar_vector_agree(labels, xs):
    e = E.Expression.from_labels(labels)
    try:
        s = E.evaluate(e, xs)
    except E.EvaluationError:
        return
    assert math.isfinite(s)
    v = E.evaluate(e, tuple(np.array([x, x]) for x in xs))
    np.testing.assert_allclose(v, [s, s], rtol=1e-12, atol=1e-12)


def test_arity_invalid_rejected():
    with pytest.raises(ValueError):
        E.Expression.from_labels(["+", "x1"])
    with pytest.raises(ValueError):
        E.Expression.from_labels(["x1", "x2"])
    with pytest.raises(ValueError):
        E.Expression.from_labels(["+"] * 40 + ["x1"] * 41)  # longer than 64


def test_eval_examples():
    assert E.evaluate(E.parse("x1 + x2"), (2, 3, 0, 0)) == 5
    assert E.evaluate(E.parse("x1 / x2"), (1, 0, 0, 0)) == pytest.approx(1e9)
    assert E.evaluate(E.parse("x1 / x2"), (1, -1e-12, 0, 0)) == pytest.approx(-1e9)
    from imdsr.control import _shipped_law_text
    assert E.evaluate(E.parse(_shipped_law_text("vq")), (0, 0, 0, 0)) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e-6, 1e-6))
def test_protected_division_finite(a, b):
    assert math.isfinite(E.protected_div(a, b))
    v = E.protected_div(np.array([a]), np.array([b]))
    assert np.all(np.isfinite(v))


def test_eval_nonfinite_raises():
    e = E.parse("x1 * x1 * x1 * x1")
    with pytest.raises(E.EvaluationError):
        E.evaluate(e, (1e100, 0, 0, 0))
    with pytest.raises(E.EvaluationError):
        E.evaluate(e, (np.array([1.0, 1e100]), 0, 0, 0))


def test_eval_is_deterministic():
    e = E.parse("sin(x1*x3) + cos(x2)/x4")
    xs = (0.3, -1.7, 2.2, 0.01)
    assert E.evaluate(e, xs) == E.evaluate(e, xs)


def test_feature_scaling_applied_first():
    meta = E.FeatureScaling(offset=(1.0, 0.0, 0.0, 0.0), scale=(2.0, 1.0, 1.0, 1.0))
    e = E.parse("x1", meta)
    assert E.evaluate(e, (5.0, 0, 0, 0)) == 2.0


def test_complexity():
    assert E.complexity(E.parse("x1")) == 1
    assert E.complexity(E.parse("(x1 + x2)")) == 3
    assert E.complexity(E.parse("13*x1 - sin(x1 - x4)")) == 8


def test_expression_files(tmp_path):
    p = tmp_path / "law.expr"
    E.write_expression(p, E.parse("12*x2 + 2*x4"))
    assert p.read_text(encoding="utf-8") == "((12 * x2) + (2 * x4))\n"
    e = E.load_expression(p)
    assert e.labels == ["+", "*", "12", "x2", "*", "2", "x4"]
    (tmp_path / "law.expr.json").write_text(json.dumps(
        {"feature_scaling": {"offset": [0, 0, 0, 0], "scale": [1, 2, 1, 1]}}))
    assert E.load_expression(p).meta.scale == (1.0, 2.0, 1.0, 1.0)
    (tmp_path / "two.expr").write_text("x1\n\nx2\n")
    assert len(E.read_expressions(tmp_path / "two.expr")) == 2
    with pytest.raises(ValueError):
        E.load_expression(tmp_path / "two.expr")
