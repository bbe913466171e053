"""A small arithmetic expression language for coefficients and data.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | VAR | FUNC '(' expr [',' expr] ')' | '(' expr ')'

Variables are ``t``, ``x`` and ``z``.  Evaluation is vectorized over numpy
arrays; inputs broadcast against each other.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

VARIABLES = ("t", "x", "z")
FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "abs": (1, np.abs),
    "sqrt": (1, np.sqrt),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}


class ExpressionError(ValueError):
    """Parse failure; ``offset`` is the byte offset of the offending token."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if text != value:
            if value == ")":
                raise ExpressionError("unbalanced parentheses", off)
            raise ExpressionError(f"expected {value!r}, got {text!r}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            if text == ")":
                raise ExpressionError("unbalanced parentheses", off)
            raise ExpressionError(f"unexpected token {text!r}", off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, text, _ = self.peek()
        if kind == "op" and text in ("+", "-"):
            self.take()
            operand = self.unary()
            return Neg(operand) if text == "-" else operand
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in VARIABLES:
                return Var(text)
            if text in FUNCTIONS:
                arity = FUNCTIONS[text][0]
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != arity:
                    raise ExpressionError(f"{text} takes {arity} argument(s), got {len(args)}", off)
                return Call(text, tuple(args))
            raise ExpressionError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of input", off)
        if text == ")":
            raise ExpressionError("unbalanced parentheses", off)
        raise ExpressionError(f"unexpected token {text!r}", off)


def to_source(node: Node) -> str:
    """Fully parenthesized source; ``parse(to_source(n))`` reproduces ``n``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    return f"{node.func}({', '.join(to_source(a) for a in node.args)})"


def _free_vars(node: Node) -> set:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return _free_vars(node.operand)
    if isinstance(node, BinOp):
        return _free_vars(node.left) | _free_vars(node.right)
    out = set()
    for a in node.args:
        out |= _free_vars(a)
    return out


def _check(result, what):
    if not np.all(np.isfinite(result)):
        raise EvaluationError(f"non-finite result in {what}")
    return result


def _compile(node: Node) -> Callable:
    if isinstance(node, Num):
        v = float(node.value)
        return lambda env: v
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        inner = _compile(node.operand)
        return lambda env: -inner(env)
    if isinstance(node, BinOp):
        lf, rf = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            return lambda env: lf(env) + rf(env)
        if op == "-":
            return lambda env: lf(env) - rf(env)
        if op == "*":
            return lambda env: lf(env) * rf(env)
        if op == "/":
            def div(env):
                den = rf(env)
                if np.any(np.asarray(den) == 0):
                    raise EvaluationError("division by zero")
                return lf(env) / den
            return div

        def power(env):
            with np.errstate(all="ignore"):
                return _check(np.power(np.asarray(lf(env), dtype=float), rf(env)), "'^'")
        return power
    fn = FUNCTIONS[node.func][1]
    args = [_compile(a) for a in node.args]
    what = node.func

    def call(env):
        with np.errstate(all="ignore"):
            return _check(fn(*[a(env) for a in args]), what)
    return call


@dataclass(frozen=True, eq=False)
class ExpressionProgram:
    """Parsed expression; call with keyword arrays ``t``, ``x``, ``z``."""

    tree: Node
    source: str

    def __post_init__(self):
        object.__setattr__(self, "_fn", _compile(self.tree))

    @property
    def variables(self) -> set:
        return _free_vars(self.tree)

    def __eq__(self, other):
        return isinstance(other, ExpressionProgram) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __call__(self, t=0.0, x=0.0, z=0.0) -> np.ndarray:
        env = {"t": np.asarray(t, dtype=float), "x": np.asarray(x, dtype=float),
               "z": np.asarray(z, dtype=float)}
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._fn(env)
        shape = np.broadcast_shapes(env["t"].shape, env["x"].shape, env["z"].shape)
        out = np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
        return _check(out, repr(self.source))

    def print(self) -> str:
        return to_source(self.tree)

    def __repr__(self):
        return f"ExpressionProgram({self.source!r})"


def parse_expression(src) -> ExpressionProgram:
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        src = repr(float(src))
    if not isinstance(src, str) or not src.strip():
        raise ExpressionError("empty input", 0)
    return ExpressionProgram(_Parser(src).parse(), src)
