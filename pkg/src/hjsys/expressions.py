"""
Tiny arithmetic expression language used in scenario files.

Grammar (whitespace ignored)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | atom
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Names are the variables ``x`` and ``y`` and the constant ``pi``; functions are
``sin``, ``cos``, ``abs`` (one argument) and ``min``, ``max`` (two or more).
Evaluation is vectorized over numpy arrays and total: a zero denominator
yields 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionSyntaxError

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/(),]))")

_UNARY = {"sin": np.sin, "cos": np.cos, "abs": np.abs}
_NARY = {"min": np.minimum, "max": np.maximum}
_VARIABLES = ("x", "y")


@dataclass(frozen=True)
class Num:
    value: float

    def eval(self, env):
        return self.value


@dataclass(frozen=True)
class Var:
    name: str

    def eval(self, env):
        if self.name not in env or env[self.name] is None:
            raise ValueError(f"variable {self.name!r} is not bound")
        return env[self.name]


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        b = np.asarray(b, dtype=float)
        safe = np.where(b == 0.0, 1.0, b)
        return np.where(b == 0.0, 0.0, np.asarray(a, dtype=float) / safe)


@dataclass(frozen=True)
class Neg:
    operand: object

    def eval(self, env):
        return -self.operand.eval(env)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def eval(self, env):
        vals = [a.eval(env) for a in self.args]
        if self.func in _UNARY:
            return _UNARY[self.func](vals[0])
        out = vals[0]
        for v in vals[1:]:
            out = _NARY[self.func](out, v)
        return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            mt = _TOKEN.match(text, pos)
            if mt is None:
                bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad)
            kind = mt.lastgroup
            start = mt.start(kind)
            self.tokens.append((kind, mt.group(kind), start))
            pos = mt.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "eof":
            what = "end of input" if kind == "eof" else repr(val)
            raise ExpressionSyntaxError(f"expected {value!r}, found {what}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "eof":
            raise ExpressionSyntaxError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            inner = self.unary()
            return Neg(inner) if val == "-" else inner
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val == "pi":
                return Num(float(np.pi))
            if val in _VARIABLES:
                return Var(val)
            if val in _UNARY or val in _NARY:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if val in _UNARY and len(args) != 1:
                    raise ExpressionSyntaxError(f"{val} takes one argument", pos)
                if val in _NARY and len(args) < 2:
                    raise ExpressionSyntaxError(f"{val} takes at least two arguments", pos)
                return Call(val, tuple(args))
            raise ExpressionSyntaxError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "eof" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {what}", pos)


class Expression:
    """A parsed expression, callable on coordinate arrays."""

    def __init__(self, text: str, root):
        self.text = text
        self.root = root

    def __call__(self, x, y=None):
        x = np.asarray(x, dtype=float)
        out = self.root.eval({"x": x, "y": None if y is None else np.asarray(y, dtype=float)})
        shape = np.broadcast_shapes(x.shape, np.shape(y)) if y is not None else x.shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and self.root == other.root

    def __hash__(self) -> int:
        return hash(self.root)


def parse_expression(text: str) -> Expression:
    """Parse ``text``; raises :class:`ExpressionSyntaxError` with a 0-based position."""
    if isinstance(text, (int, float)):
        text = repr(float(text))
    return Expression(text, _Parser(text).parse())
