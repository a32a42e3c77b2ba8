"""
Symbolic expressions over the four controller features x1..x4.

Expressions are stored as prefix (pre-order) token sequences. The text
grammar is ordinary infix arithmetic::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | primary
    primary := NUMBER | VAR | ('sin' | 'cos') '(' expr ')' | '(' expr ')'

There is no negation token: a negated literal folds into a negative
constant and any other negation ``-a`` becomes ``0 - a``. ``to_text``
prints fully parenthesised infix that parses back to the same tokens.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VARIABLES = ("x1", "x2", "x3", "x4")
BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("sin", "cos")
DIV_EPS = 1e-9
DEFAULT_MAX_LENGTH = 64


class ExprSyntaxError(ValueError):
    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} at position {position}")


class EvaluationError(ArithmeticError):
    """A non-finite intermediate value appeared during evaluation."""


@dataclass(frozen=True)
class Token:
    kind: str  # "binary" | "unary" | "var" | "const"
    value: object

    def __post_init__(self):
        ok = ((self.kind == "binary" and self.value in BINARY_OPS)
              or (self.kind == "unary" and self.value in UNARY_OPS)
              or (self.kind == "var" and self.value in VARIABLES)
              or (self.kind == "const" and isinstance(self.value, float)
                  and math.isfinite(self.value)))
        if not ok:
            raise ValueError(f"invalid token {self.kind}:{self.value!r}")

    @property
    def arity(self):
        return {"binary": 2, "unary": 1}.get(self.kind, 0)

    @property
    def label(self):
        if self.kind == "const":
            return _format_number(self.value)
        return self.value

    @classmethod
    def op(cls, name):
        return cls("binary" if name in BINARY_OPS else "unary", name)

    @classmethod
    def var(cls, name):
        return cls("var", name)

    @classmethod
    def const(cls, value):
        return cls("const", float(value))


def token_from_label(label):
    """Build a token from its printed label ('+', 'sin', 'x2', '13', '0.5')."""
    if label in BINARY_OPS:
        return Token("binary", label)
    if label in UNARY_OPS:
        return Token("unary", label)
    if label in VARIABLES:
        return Token("var", label)
    return Token.const(float(label))


def _format_number(v):
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True)
class FeatureScaling:
    """Per-variable affine normalisation applied as (x - offset) / scale."""

    offset: tuple = (0.0, 0.0, 0.0, 0.0)
    scale: tuple = (1.0, 1.0, 1.0, 1.0)

    def to_dict(self):
        return {"offset": list(self.offset), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["offset"]), tuple(float(v) for v in d["scale"]))


def arity_valid(tokens):
    c = 1
    for tok in tokens:
        if c <= 0:
            return False
        c += tok.arity - 1
    return c == 0 and len(tokens) > 0


@dataclass(frozen=True)
class Expression:
    tokens: tuple
    meta: FeatureScaling | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not 1 <= len(self.tokens) <= DEFAULT_MAX_LENGTH:
            raise ValueError(f"expression length {len(self.tokens)} outside [1, {DEFAULT_MAX_LENGTH}]")
        if not arity_valid(self.tokens):
            raise ValueError("token sequence is not arity-valid")

    @classmethod
    def from_labels(cls, labels, meta=None):
        return cls(tuple(token_from_label(s) for s in labels), meta)

    @property
    def labels(self):
        return [t.label for t in self.tokens]

    def __str__(self):
        return to_text(self)

    def __call__(self, *xs):
        return evaluate(self, xs)


# --------------------------------------------------------------------- parsing

_LEX = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
                  r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/()]))")


def _lex(text):
    out = []
    pos = 0
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _LEX.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", n))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _lex(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", 0)
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = [Token.op(op)] + node + self.term()
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = [Token.op(op)] + node + self.unary()
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            inner = self.unary()
            if len(inner) == 1 and inner[0].kind == "const":
                return [Token.const(-inner[0].value)]
            return [Token.op("-"), Token.const(0.0)] + inner
        return self.primary()

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            v = float(val)
            if not math.isfinite(v):
                raise ExprSyntaxError(f"constant {val!r} is not finite", pos)
            return [Token.const(v)]
        if kind == "name":
            if val in VARIABLES:
                return [Token.var(val)]
            if val in UNARY_OPS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return [Token.op(val)] + inner
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse(text, meta=None):
    """
    Parse infix text into a prefix :class:`Expression`.

    Raises
    ------
    ExprSyntaxError
        On empty input, unknown identifiers or malformed syntax; carries the
        0-based character position of the failure.
    """
    return Expression(tuple(_Parser(text).parse()), meta)


def to_text(expr):
    """Fully parenthesised infix form of ``expr``."""
    stack = []
    for tok in reversed(expr.tokens):
        if tok.kind == "binary":
            a = stack.pop()
            b = stack.pop()
            stack.append(f"({a} {tok.value} {b})")
        elif tok.kind == "unary":
            stack.append(f"{tok.value}({stack.pop()})")
        elif tok.kind == "const" and tok.value < 0:
            stack.append(f"({tok.label})")
        else:
            stack.append(tok.label)
    return stack[0]


def complexity(expr):
    return len(expr.tokens)


# ------------------------------------------------------------------ evaluation

def protected_div(a, b):
    """a / b with |b| floored at 1e-9, keeping the sign of b (sign(0) = +1)."""
    if isinstance(b, np.ndarray) or isinstance(a, np.ndarray):
        b = np.asarray(b, dtype=float)
        den = np.where(np.abs(b) > DIV_EPS, b, np.where(b < 0, -DIV_EPS, DIV_EPS))
        return a / den
    if abs(b) > DIV_EPS:
        return a / b
    return a / (-DIV_EPS if b < 0 else DIV_EPS)


def _bind(expr, bindings):
    if len(bindings) != 4:
        raise ValueError(f"expected 4 bindings (x1..x4), got {len(bindings)}")
    xs = list(bindings)
    if expr.meta is not None:
        xs = [(x - o) / s for x, o, s in zip(xs, expr.meta.offset, expr.meta.scale)]
    return dict(zip(VARIABLES, xs))


def evaluate(expr, bindings):
    """
    Evaluate ``expr`` with x1..x4 bound to ``bindings``.

    ``bindings`` holds four floats or four equally shaped arrays; the result
    has the same shape. Feature scaling in ``expr.meta`` is applied first.

    Raises
    ------
    EvaluationError
        If any intermediate value is NaN or infinite.
    """
    env = _bind(expr, bindings)
    vector = any(isinstance(v, np.ndarray) for v in env.values())
    if vector:
        shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape
        env = {k: np.broadcast_to(np.asarray(v, dtype=float), shape) for k, v in env.items()}
        sin, cos = np.sin, np.cos

        def finite(v):
            return bool(np.all(np.isfinite(v)))
    else:
        sin, cos = math.sin, math.cos
        finite = math.isfinite
    stack = []
    with np.errstate(all="ignore"):
        for tok in reversed(expr.tokens):
            k = tok.kind
            if k == "var":
                v = env[tok.value]
            elif k == "const":
                v = tok.value
            elif k == "unary":
                a = stack.pop()
                try:
                    v = sin(a) if tok.value == "sin" else cos(a)
                except (ValueError, OverflowError) as exc:
                    raise EvaluationError(f"{tok.value} of non-finite value") from exc
            else:
                a = stack.pop()
                b = stack.pop()
                op = tok.value
                try:
                    if op == "+":
                        v = a + b
                    elif op == "-":
                        v = a - b
                    elif op == "*":
                        v = a * b
                    else:
                        v = protected_div(a, b)
                except OverflowError as exc:
                    raise EvaluationError("overflow") from exc
            if not finite(v):
                raise EvaluationError(f"non-finite value after {tok.label!r}")
            stack.append(v)
    out = stack[0]
    if vector:
        return np.array(out, dtype=float) * np.ones(shape)
    return float(out)


# ----------------------------------------------------------------------- files

def read_expressions(path):
    """Read one expression per non-blank line; a ``<path>.json`` sidecar may hold feature scaling."""
    path = Path(path)
    meta = None
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        info = json.loads(sidecar.read_text(encoding="utf-8"))
        if info.get("feature_scaling"):
            meta = FeatureScaling.from_dict(info["feature_scaling"])
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    return [parse(ln, meta) for ln in lines if ln]


def load_expression(path):
    exprs = read_expressions(path)
    if len(exprs) != 1:
        raise ValueError(f"{path}: expected exactly one expression, found {len(exprs)}")
    return exprs[0]


def write_expression(path, expr):
    Path(path).write_text(to_text(expr) + "\n", encoding="utf-8")
