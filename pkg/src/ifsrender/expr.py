"""Arithmetic expression language for map coordinates and grey-level maps.

Expressions appear in configuration files and define the coordinate
functions of the contraction maps (over variables ``x1,y1,...,xm,ym``,
with ``x``/``y`` accepted as aliases when the arity is 1) and the grey
level maps (over the single variable ``t``).  Supported syntax:

* decimal and scientific number literals
* binary ``+ - * / ^`` with ``^`` meaning power, right associative
* unary minus
* calls of ``sin cos abs sqrt min max floor exp`` (``min``/``max`` take
  two or more arguments)
* parentheses; whitespace is insignificant

Precedence, tightest first: ``^``, unary minus, ``* /``, ``+ -``.

Parsed expressions are immutable; evaluation is pure, so expressions can
be shared freely between threads.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np


class ExprError(ValueError):
    """Base class for expression failures."""


class ExprSyntaxError(ExprError):
    """Malformed source text; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ExprDomainError(ExprError):
    """Evaluation left the expression's domain (1/0, sqrt of negative, ...)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expression", ...]


Expression = Union[Num, Var, Neg, BinOp, Call]

FUNCTIONS = {"sin": 1, "cos": 1, "abs": 1, "sqrt": 1, "floor": 1, "exp": 1,
             "min": -2, "max": -2}  # negative arity means "at least"

_TOKEN_RE = re.compile(
    r"""\s*(?:
    (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*)|
    (?P<op>[-+*/^(),])
    )""",
    re.VERBOSE,
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            if source[pos:].strip() == "":
                break
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(("eof", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.tokens = _tokenize(source)
        self.variables = set(variables)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def pop(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, text, pos = self.pop()
        if kind != "op" or text != value:
            raise ExprSyntaxError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self) -> Expression:
        expr = self.sum()
        kind, text, pos = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected trailing {text!r}", pos)
        return expr

    def sum(self) -> Expression:
        left = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.pop()
                left = BinOp(text, left, self.term())
            else:
                return left

    def term(self) -> Expression:
        left = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.pop()
                left = BinOp(text, left, self.unary())
            else:
                return left

    def unary(self) -> Expression:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.pop()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.pop()
            # right associative; allow a signed exponent, e.g. 2^-3
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expression:
        kind, text, pos = self.pop()
        if kind == "number":
            return Num(float(text))
        if kind == "ident":
            nxt_kind, nxt_text, _ = self.peek()
            if nxt_kind == "op" and nxt_text == "(":
                return self.call(text, pos)
            if text not in self.variables:
                raise ExprSyntaxError(f"undeclared variable {text!r}", pos)
            return Var(text)
        if kind == "op" and text == "(":
            expr = self.sum()
            self.expect(")")
            return expr
        raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", pos)

    def call(self, name: str, pos: int) -> Expression:
        if name not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.sum()]
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == ",":
                self.pop()
                args.append(self.sum())
            else:
                break
        self.expect(")")
        arity = FUNCTIONS[name]
        if arity >= 0 and len(args) != arity:
            raise ExprSyntaxError(f"{name} takes {arity} argument(s), got {len(args)}", pos)
        if arity < 0 and len(args) < -arity:
            raise ExprSyntaxError(f"{name} takes at least {-arity} arguments, got {len(args)}", pos)
        return Call(name, tuple(args))


def parse(source: str, variables: Sequence[str]) -> Expression:
    """Parse ``source`` into an expression tree.

    ``variables`` lists the names that may appear; anything else raises
    :class:`ExprSyntaxError` with the offending position.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, variables).parse()


_SCALAR_FUNCS = {
    "sin": math.sin, "cos": math.cos, "abs": abs, "floor": math.floor,
    "exp": math.exp, "min": min, "max": max,
}

_ARRAY_FUNCS = {
    "sin": np.sin, "cos": np.cos, "abs": np.abs, "floor": np.floor, "exp": np.exp,
}


def evaluate(expr: Expression, bindings: Mapping[str, float]) -> float:
    """Evaluate ``expr`` in IEEE double precision under ``bindings``."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return float(bindings[expr.name])
        except KeyError:
            raise ExprDomainError(f"unbound variable {expr.name!r}") from None
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, bindings)
    if isinstance(expr, BinOp):
        a = evaluate(expr.left, bindings)
        b = evaluate(expr.right, bindings)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if expr.op == "/":
            if b == 0.0:
                raise ExprDomainError("division by zero")
            return a / b
        try:
            return math.pow(a, b)
        except (ValueError, OverflowError) as exc:
            raise ExprDomainError(f"power {a}^{b} undefined") from exc
    if expr.func == "sqrt":
        arg = evaluate(expr.args[0], bindings)
        if arg < 0.0:
            raise ExprDomainError(f"sqrt of negative value {arg}")
        return math.sqrt(arg)
    return _SCALAR_FUNCS[expr.func](*(evaluate(a, bindings) for a in expr.args))


def evaluate_array(expr: Expression, bindings: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate ``expr`` elementwise over numpy array bindings."""
    if isinstance(expr, Num):
        return np.float64(expr.value)
    if isinstance(expr, Var):
        try:
            return bindings[expr.name]
        except KeyError:
            raise ExprDomainError(f"unbound variable {expr.name!r}") from None
    if isinstance(expr, Neg):
        return -evaluate_array(expr.operand, bindings)
    if isinstance(expr, BinOp):
        a = evaluate_array(expr.left, bindings)
        b = evaluate_array(expr.right, bindings)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if expr.op == "/":
            if np.any(b == 0.0):
                raise ExprDomainError("division by zero")
            return a / b
        with np.errstate(invalid="ignore"):
            out = np.power(a, b)
        if np.any(np.isnan(out)):
            raise ExprDomainError("power with negative base and fractional exponent")
        return out
    if expr.func == "sqrt":
        arg = evaluate_array(expr.args[0], bindings)
        if np.any(arg < 0.0):
            raise ExprDomainError("sqrt of negative value")
        return np.sqrt(arg)
    if expr.func in ("min", "max"):
        fn = np.minimum if expr.func == "min" else np.maximum
        args = [evaluate_array(a, bindings) for a in expr.args]
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return _ARRAY_FUNCS[expr.func](evaluate_array(expr.args[0], bindings))


def to_source(expr: Expression) -> str:
    """Render an expression tree back to parseable source text."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        return f"-({to_source(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({to_source(expr.left)} {expr.op} {to_source(expr.right)})"
    return f"{expr.func}({', '.join(to_source(a) for a in expr.args)})"


def variables_of(expr: Expression) -> set[str]:
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Neg):
        return variables_of(expr.operand)
    if isinstance(expr, BinOp):
        return variables_of(expr.left) | variables_of(expr.right)
    if isinstance(expr, Call):
        out: set[str] = set()
        for a in expr.args:
            out |= variables_of(a)
        return out
    return set()


class PiecewiseMap:
    """Right-continuous step/piecewise map on [0, 1].

    ``breakpoints`` are the left endpoints ``0 = b0 < b1 < ... < bk <= 1``;
    piece ``i`` applies on ``[b_i, b_{i+1})`` and the last piece on
    ``[b_k, 1]``.  Piece values are constants or expressions in ``t``.
    """

    def __init__(self, breakpoints: Sequence[float], pieces: Sequence[Union[float, Expression]]):
        if len(breakpoints) != len(pieces):
            raise ValueError("one piece per breakpoint required")
        if not breakpoints or breakpoints[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        for lo, hi in zip(breakpoints, breakpoints[1:]):
            if not lo < hi:
                raise ValueError("breakpoints must be strictly increasing")
        if breakpoints[-1] > 1.0:
            raise ValueError("breakpoints must not exceed 1")
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.pieces = tuple(pieces)

    def piece_at(self, t: float) -> Union[float, Expression]:
        return self.pieces[bisect.bisect_right(self.breakpoints, t) - 1]

    def __call__(self, t: float) -> float:
        piece = self.piece_at(t)
        if isinstance(piece, float):
            return piece
        return evaluate(piece, {"t": t})


GreyMap = Union[PiecewiseMap, Expression]


def eval_grey_raw(grey: GreyMap, t: float) -> float:
    """Grey map value before clamping; used by system validation."""
    if isinstance(grey, PiecewiseMap):
        return grey(t)
    return evaluate(grey, {"t": t})


def eval_grey(grey: GreyMap, t: float) -> float:
    """Evaluate a grey level map at ``t`` in [0, 1], clamped into [0, 1].

    Values escaping [0, 1] are clamped here; ``validate_system`` reports
    them as warnings.
    """
    if not 0.0 <= t <= 1.0:
        raise ExprDomainError(f"grey map argument {t} outside [0, 1]")
    return min(1.0, max(0.0, eval_grey_raw(grey, t)))
