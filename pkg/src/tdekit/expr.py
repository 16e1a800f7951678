"""Scalar expression trees: parsing, printing, evaluation and symbolic derivatives.

Grammar (whitespace ignored)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          exponent must fold to a constant
    atom   := NUMBER | xK | '(' expr ')'
            | sqrt(expr) | abs(expr) | min(expr, expr) | max(expr, expr)
            | if(expr CMP expr, expr, expr)     CMP in < <= > >=

Variables are ``x1 .. xn`` (1-based, as in the mathematical notation).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ParseError

__all__ = [
    "Expr", "Const", "Var", "Neg", "BinOp", "Pow", "Func", "Cond",
    "parse_expr", "to_text", "diff", "gradient", "switches",
]

CMP_OPS = ("<", "<=", ">", ">=")
FUNC_ARITY = {"sqrt": 1, "abs": 1, "min": 2, "max": 2}


class Expr:
    """Base node.  Subclasses are frozen dataclasses, hence hashable."""

    def __str__(self) -> str:
        return to_text(self)

    @cached_property
    def scalar_fn(self) -> Callable[[Sequence[float]], float]:
        return _compile(self, vector=False)

    @cached_property
    def vector_fn(self) -> Callable[[np.ndarray], np.ndarray]:
        return _compile(self, vector=True)

    def evaluate(self, x: Sequence[float]) -> float:
        """Evaluate at a single point; raises :class:`NonFiniteError` on failure."""
        try:
            value = self.scalar_fn(x)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise NonFiniteError(f"cannot evaluate {self} at {tuple(x)}: {exc}") from None
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite value of {self} at {tuple(x)}")
        return float(value)

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at the rows of ``X`` (shape ``(N, n)``); no finiteness check."""
        X = np.asarray(X, dtype=float)
        with np.errstate(all="ignore"):
            out = self.vector_fn(X.T)
        return np.broadcast_to(np.asarray(out, dtype=float), X.shape[:1]).copy()

    def max_var(self) -> int:
        return max((c.max_var() for c in self.children()), default=0)

    def children(self) -> tuple[Expr, ...]:
        return ()


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int

    def max_var(self) -> int:
        return self.index


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: float

    def children(self):
        return (self.base,)


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    args: tuple[Expr, ...]

    def children(self):
        return self.args


@dataclass(frozen=True, eq=True)
class Cond(Expr):
    op: str
    lhs: Expr
    rhs: Expr
    then: Expr
    other: Expr

    def children(self):
        return (self.lhs, self.rhs, self.then, self.other)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|[-+*/^(),<>]))"
)


class _Parser:
    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                while text[pos].isspace():
                    pos += 1
                raise ParseError(f"unexpected character {text[pos]!r}", self._byte(pos))
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), self._byte(start)))
            pos = m.end()
        self.tokens.append(("end", "", self._byte(len(text))))
        self.i = 0

    def _byte(self, char_pos: int) -> int:
        return len(self.text[:char_pos].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind == "end":
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise ParseError("empty expression", 0)
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            arg = self.unary()
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            off = self.take()[2]
            exponent = self.unary()
            value = _fold_constant(exponent)
            if value is None:
                raise ParseError("exponent must be a constant", off)
            return Pow(base, value)
        return base

    def atom(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.n:
                    raise ParseError(f"variable {val} out of range 1..{self.n}", off)
                return Var(idx)
            if val == "if":
                self.expect("(")
                lhs = self.expr()
                ckind, cop, coff = self.take()
                if cop not in CMP_OPS or ckind != "op":
                    raise ParseError("expected comparison operator", coff)
                rhs = self.expr()
                self.expect(",")
                then = self.expr()
                self.expect(",")
                other = self.expr()
                self.expect(")")
                return Cond(cop, lhs, rhs, then, other)
            if val in FUNC_ARITY:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNC_ARITY[val]:
                    raise ParseError(f"{val} takes {FUNC_ARITY[val]} argument(s)", off)
                return Func(val, tuple(args))
            raise ParseError(f"unknown identifier {val!r}", off)
        raise ParseError(f"unexpected token {val or 'end of input'!r}", off)


def _fold_constant(e: Expr) -> float | None:
    if e.max_var() == 0 and not _has_cond(e):
        try:
            return e.evaluate(())
        except NonFiniteError:
            return None
    return None


def _has_cond(e: Expr) -> bool:
    return isinstance(e, Cond) or any(_has_cond(c) for c in e.children())


def parse_expr(text: str, n: int) -> Expr:
    """Parse ``text`` into an expression over variables ``x1..xn``."""
    return _Parser(text, n).parse()


# ---------------------------------------------------------------------------
# printing

def to_text(e: Expr) -> str:
    """Fully parenthesised text that re-parses to an identical tree."""
    if isinstance(e, Const):
        v = float(e.value)
        # parenthesised so that a negative base keeps its sign under ^
        return f"({v!r})" if math.copysign(1.0, v) < 0 else repr(v)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        return f"({to_text(e.base)} ^ {float(e.exponent)!r})"
    if isinstance(e, Func):
        return f"{e.name}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, Cond):
        return (f"if({to_text(e.lhs)} {e.op} {to_text(e.rhs)}, "
                f"{to_text(e.then)}, {to_text(e.other)})")
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# compilation to Python closures

def _src(e: Expr, vector: bool) -> str:
    if isinstance(e, Const):
        v = float(e.value)
        # parenthesised so that a negative base keeps its sign under ^
        return f"({v!r})" if math.copysign(1.0, v) < 0 else repr(v)
    if isinstance(e, Var):
        return f"x[{e.index - 1}]"
    if isinstance(e, Neg):
        return f"(-{_src(e.arg, vector)})"
    if isinstance(e, BinOp):
        return f"({_src(e.left, vector)} {e.op} {_src(e.right, vector)})"
    if isinstance(e, Pow):
        fn = "np.power" if vector else "math.pow"
        return f"{fn}({_src(e.base, vector)}, {float(e.exponent)!r})"
    if isinstance(e, Func):
        args = ", ".join(_src(a, vector) for a in e.args)
        if vector:
            name = {"sqrt": "np.sqrt", "abs": "np.abs", "min": "np.minimum", "max": "np.maximum"}[e.name]
        else:
            name = {"sqrt": "math.sqrt", "abs": "abs", "min": "min", "max": "max"}[e.name]
        return f"{name}({args})"
    if isinstance(e, Cond):
        test = f"({_src(e.lhs, vector)} {e.op} {_src(e.rhs, vector)})"
        if vector:
            return f"np.where({test}, {_src(e.then, vector)}, {_src(e.other, vector)})"
        return f"({_src(e.then, vector)} if {test} else {_src(e.other, vector)})"
    raise TypeError(f"not an expression node: {e!r}")


def _compile(e: Expr, vector: bool):
    code = f"lambda x: {_src(e, vector)}"
    return eval(code, {"math": math, "np": np, "abs": abs, "min": min, "max": max})  # noqa: S307


def compile_many(exprs: Sequence[Expr]) -> Callable[[Sequence[float]], tuple]:
    """One closure returning the tuple of all values (scalar mode, no checks)."""
    body = ", ".join(_src(e, False) for e in exprs)
    return eval(f"lambda x: ({body},)", {"math": math, "abs": abs, "min": min, "max": max})  # noqa: S307


# ---------------------------------------------------------------------------
# symbolic differentiation

ZERO = Const(0.0)
ONE = Const(1.0)


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, c: float) -> Expr:
    if c == 0.0:
        return ONE
    if c == 1.0:
        return a
    return Pow(a, c)


def diff(e: Expr, k: int) -> Expr:
    """Partial derivative with respect to ``x_k`` (1-based), branch by branch."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == k else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, k))
    if isinstance(e, BinOp):
        da, db = diff(e.left, k), diff(e.right, k)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        # quotient rule
        num = sub(mul(da, e.right), mul(e.left, db))
        return div(num, power(e.right, 2.0))
    if isinstance(e, Pow):
        da = diff(e.base, k)
        if _is(da, 0.0):
            return ZERO
        return mul(mul(Const(e.exponent), power(e.base, e.exponent - 1.0)), da)
    if isinstance(e, Func):
        if e.name == "sqrt":
            da = diff(e.args[0], k)
            return div(da, mul(Const(2.0), e))
        if e.name == "abs":
            a = e.args[0]
            da = diff(a, k)
            if _is(da, 0.0):
                return ZERO
            return Cond(">=", a, ZERO, da, neg(da))
        a, b = e.args
        da, db = diff(a, k), diff(b, k)
        if da == db:
            return da
        return Cond("<=" if e.name == "min" else ">=", a, b, da, db)
    if isinstance(e, Cond):
        dt, do = diff(e.then, k), diff(e.other, k)
        if dt == do:
            return dt
        return Cond(e.op, e.lhs, e.rhs, dt, do)
    raise TypeError(f"not an expression node: {e!r}")


def gradient(e: Expr, n: int) -> tuple[Expr, ...]:
    return tuple(diff(e, k) for k in range(1, n + 1))


def switches(e: Expr) -> list[Expr]:
    """Switching functions whose zero sets are the branch boundaries of ``e``."""
    found: dict[Expr, None] = {}

    def walk(node: Expr):
        if isinstance(node, Cond):
            found[sub(node.lhs, node.rhs)] = None
        elif isinstance(node, Func) and node.name == "abs":
            found[node.args[0]] = None
        elif isinstance(node, Func) and node.name in ("min", "max"):
            found[sub(node.args[0], node.args[1])] = None
        for c in node.children():
            walk(c)

    walk(e)
    return list(found)
