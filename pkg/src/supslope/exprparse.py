"""A small arithmetic language for scalar fields on the torus.

Grammar (precedence high to low: ``^``, unary minus, ``* /``, ``+ -``)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?          # right associative
    atom   := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"

Variables are ``x1 .. xd`` (real coordinates in [0, 1)); functions are
sin, cos, exp, log, abs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ExprEvalError, ExprSyntaxError, UnknownIdentifierError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


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
    arg: "Node"


Node = Union[Num, Pi, Var, Neg, BinOp, Call]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)
_VAR_RE = re.compile(r"^x([1-9]\d*)$")


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        while pos < len(src) and src[pos].isspace():
            pos += 1
        if pos == len(src):
            break
        m = _TOKEN_RE.match(src, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
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
        kind, text, _ = self.peek()
        if kind == "op" and text in ("-", "+"):
            self.take()
            operand = self.unary()
            return Neg(operand) if text == "-" else operand
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text == "pi":
                return Pi()
            m = _VAR_RE.match(text)
            if m:
                return Var(int(m.group(1)))
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            raise UnknownIdentifierError(text, pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse(src: str) -> Node:
    """Parse expression text into an AST."""
    return _Parser(src).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_text(node: Node) -> str:
    """Canonical text with the minimal parentheses needed to re-parse identically."""
    return _fmt(node)


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Num) and (node.value < 0 or repr(node.value)[0] == "-"):
        return _PREC["neg"]
    return 5


def _fmt(node):
    if isinstance(node, Num):
        v = node.value
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("non-finite literal cannot be printed")
        return repr(v)
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Call):
        return f"{node.func}({_fmt(node.arg)})"
    if isinstance(node, Neg):
        inner = _fmt(node.operand)
        # -(a^b) prints as -a^b; anything looser needs parentheses
        if _prec(node.operand) < _PREC["^"]:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left, right = _fmt(node.left), _fmt(node.right)
    if node.op == "^":
        # base must be atomic; exponent parses as unary, so only +-*/ need parens
        if _prec(node.left) <= _PREC["^"]:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
    return f"{left}{node.op}{right}"


def max_variable(node: Node) -> int:
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Neg):
        return max_variable(node.operand)
    if isinstance(node, Call):
        return max_variable(node.arg)
    if isinstance(node, BinOp):
        return max(max_variable(node.left), max_variable(node.right))
    return 0


def bind(node: Node, dim: int) -> Node:
    """Check every variable index against the real dimension ``dim``."""
    top = max_variable(node)
    if top > dim:
        raise UnknownIdentifierError(f"x{top}")
    return node


def _first_bad(mask):
    idx = np.argwhere(np.broadcast_to(mask, mask.shape))
    return tuple(int(i) for i in idx[0]) if len(idx) else ()


def _eval(node, coords, shape):
    if isinstance(node, Num):
        return np.full(shape, node.value)
    if isinstance(node, Pi):
        return np.full(shape, np.pi)
    if isinstance(node, Var):
        return coords[node.index - 1]
    if isinstance(node, Neg):
        return -_eval(node.operand, coords, shape)
    if isinstance(node, Call):
        arg = _eval(node.arg, coords, shape)
        if node.func == "log":
            bad = ~(arg > 0)
            if bad.any():
                raise ExprEvalError("log of nonpositive value", _first_bad(bad))
        with np.errstate(over="ignore"):
            return FUNCTIONS[node.func](arg)
    a = _eval(node.left, coords, shape)
    b = _eval(node.right, coords, shape)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        bad = b == 0
        if bad.any():
            raise ExprEvalError("division by zero", _first_bad(bad))
        return a / b
    with np.errstate(all="ignore"):
        out = np.power(a, b)
    bad = ~np.isfinite(out) & np.isfinite(a) & np.isfinite(b)
    if bad.any():
        raise ExprEvalError("undefined power", _first_bad(bad))
    return out


def eval_on_grid(node: Node, grid) -> np.ndarray:
    """Evaluate at every node; coordinate x_i = index_i / N."""
    bind(node, grid.dim)
    coords = grid.coords()
    out = np.asarray(_eval(node, coords, grid.shape), dtype=float)
    out = np.broadcast_to(out, grid.shape).copy()
    if not np.all(np.isfinite(out)):
        raise ExprEvalError("non-finite value", _first_bad(~np.isfinite(out)))
    return out


def field(src: str, grid) -> np.ndarray:
    """Parse and evaluate in one step."""
    return eval_on_grid(parse(src), grid)
