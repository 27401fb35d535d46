"""Tiny expression language for coefficient fields.

Grammar (standard precedence, ^ binds tighter than unary minus and is
right-associative):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Variables are ``t`` and ``x1 .. xN``. ``step(u)`` is 1 for u >= 0 and 0
otherwise, so rough (merely measurable) time dependence is expressible;
``powb(u, q)`` is |u|^q, the building block for intrinsic Hoelder test
functions. Evaluation is numpy-vectorized and never propagates NaN or inf:
any non-finite intermediate raises EvalError.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExprError, KolmoError


class EvalError(KolmoError):
    """Expression evaluation failure (division by zero, overflow, bad power)."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

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
class Bin:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["Node", ...]


Node = Num | Var | Neg | Bin | Call

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "abs": 1,
    "tanh": 1,
    "step": 1,
    "min": 2,
    "max": 2,
    "powb": 2,
}

_VAR_RE = re.compile(r"^(t|x[1-9][0-9]*)$")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<num>   (\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)? )
  | (?P<ident> [A-Za-z_][A-Za-z0-9_]* )
  | (?P<op>    [+\-*/^(),] )
  | (?P<ws>    [ \t\r\n]+ )
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | end
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprError(f"unexpected character {src[pos]!r}", line, col)
        text = m.group(0)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            found = tok.text if tok.kind != "end" else "end of input"
            raise ExprError(f"expected {text!r}, found {found!r}", tok.line, tok.col)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprError(f"unexpected trailing input {tok.text!r}", tok.line, tok.col)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            node = Bin("^", node, self.unary())
        return node

    def atom(self) -> Node:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                return self.call(tok)
            if _VAR_RE.match(tok.text):
                return Var(tok.text)
            raise ExprError(f"unknown identifier {tok.text!r}", tok.line, tok.col)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprError(
            f"unexpected token {tok.text!r}" if tok.kind != "end" else "unexpected end of input",
            tok.line,
            tok.col,
        )

    def call(self, name_tok: _Token) -> Node:
        if name_tok.text not in FUNCTIONS:
            raise ExprError(f"unknown function {name_tok.text!r}", name_tok.line, name_tok.col)
        self.advance()  # consume '('
        args = [self.expr()]
        while self.peek().kind == "op" and self.peek().text == ",":
            self.advance()
            args.append(self.expr())
        closing = self.peek()
        if closing.kind != "op" or closing.text != ")":
            raise ExprError("expected ')'", closing.line, closing.col)
        self.advance()
        arity = FUNCTIONS[name_tok.text]
        if len(args) != arity:
            raise ExprError(
                f"{name_tok.text} takes {arity} argument(s), got {len(args)}",
                name_tok.line,
                name_tok.col,
            )
        return Call(name_tok.text, tuple(args))


def parse_expr(src: str) -> Node:
    """Parse a coefficient expression; raises ExprError with position info."""
    if not isinstance(src, str):
        raise ExprError("expression source must be a string")
    return _Parser(_tokenize(src)).parse()


# ---------------------------------------------------------------------------
# Printer (canonical form; parse(to_src(node)) == node)
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Node) -> int:
    if isinstance(node, Bin):
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[node.op]
    if isinstance(node, Neg):
        return _PREC_UNARY
    return _PREC_ATOM


def to_src(node: Node) -> str:
    """Render an AST back to source in canonical form."""

    def wrap(child: Node, min_prec: int) -> str:
        text = to_src(child)
        return f"({text})" if _prec(child) < min_prec else text

    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        # operand must bind strictly tighter so --x is not emitted
        return "-" + wrap(node.operand, _PREC_UNARY + 1)
    if isinstance(node, Bin):
        if node.op == "^":
            # grammar: power := atom '^' unary
            return f"{wrap(node.left, _PREC_ATOM)}^{wrap(node.right, _PREC_UNARY)}"
        left_min = _prec(node)
        return f"{wrap(node.left, left_min)} {node.op} {wrap(node.right, left_min + 1)}"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(to_src(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def max_x_index(node: Node) -> int:
    """Largest k appearing as variable xk, 0 when no spatial variable occurs."""
    if isinstance(node, Var):
        return 0 if node.name == "t" else int(node.name[1:])
    if isinstance(node, Neg):
        return max_x_index(node.operand)
    if isinstance(node, Bin):
        return max(max_x_index(node.left), max_x_index(node.right))
    if isinstance(node, Call):
        return max((max_x_index(a) for a in node.args), default=0)
    return 0


def uses_space(node: Node) -> bool:
    return max_x_index(node) > 0


def uses_time(node: Node) -> bool:
    if isinstance(node, Var):
        return node.name == "t"
    if isinstance(node, Neg):
        return uses_time(node.operand)
    if isinstance(node, Bin):
        return uses_time(node.left) or uses_time(node.right)
    if isinstance(node, Call):
        return any(uses_time(a) for a in node.args)
    return False


_UNARY_FN = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs, "tanh": np.tanh}


def evaluate(node: Node, t, x):
    """Evaluate at time(s) t and point(s) x.

    t is a scalar or array broadcastable against x[..., 0]; x has shape
    (..., N). Returns an array of the broadcast shape (or a scalar).
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        out = _eval(node, t, x)
    out = np.asarray(out)
    if not np.all(np.isfinite(out)):
        raise EvalError("expression produced a non-finite value (division by zero, overflow, or invalid power)")
    if out.ndim == 0:
        return float(out)
    return out


def _eval(node: Node, t, x):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name == "t":
            return t
        k = int(node.name[1:])
        if k > x.shape[-1]:
            raise EvalError(f"variable {node.name} out of range for dimension {x.shape[-1]}")
        return x[..., k - 1]
    if isinstance(node, Neg):
        return -_eval(node.operand, t, x)
    if isinstance(node, Bin):
        a = _eval(node.left, t, x)
        b = _eval(node.right, t, x)
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        if node.op == "/":
            if np.any(np.asarray(b) == 0.0):
                raise EvalError("division by zero")
            return np.divide(a, b)
        return np.power(a, b)
    if isinstance(node, Call):
        if node.fn in _UNARY_FN:
            return _UNARY_FN[node.fn](_eval(node.args[0], t, x))
        if node.fn == "step":
            return np.where(np.greater_equal(_eval(node.args[0], t, x), 0.0), 1.0, 0.0)
        if node.fn == "min":
            return np.minimum(_eval(node.args[0], t, x), _eval(node.args[1], t, x))
        if node.fn == "max":
            return np.maximum(_eval(node.args[0], t, x), _eval(node.args[1], t, x))
        if node.fn == "powb":
            return np.power(np.abs(_eval(node.args[0], t, x)), _eval(node.args[1], t, x))
    raise TypeError(f"not an expression node: {node!r}")
