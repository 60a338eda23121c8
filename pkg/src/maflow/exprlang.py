"""A small, total expression language for problem data F(t, z, r), g(z), h(t, z).

Grammar (loosest binding first)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' args ')' | '(' expr ')'

Evaluation works elementwise on numpy arrays, so one parsed expression can be
applied to every grid node at once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnboundVariable, UnknownIdentifier

COORD_VARS = ("x1", "y1", "x2", "y2")
DERIVED_VARS = ("absz2", "absz12", "absz22")
ALL_VARS = frozenset(("t", "r") + COORD_VARS + DERIVED_VARS)
FUNCTIONS = {"exp": 1, "log": 1, "abs": 1, "min": -2, "max": -2}

# variables each problem slot may reference
SLOT_VARS = {
    "F": ALL_VARS,
    "g": frozenset(COORD_VARS + DERIVED_VARS),
    "h": ALL_VARS - {"r"},
    "exact": ALL_VARS - {"r"},
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    pos = 0
    tokens = []
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src.encode("utf-8"))))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, off = self.peek()
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", off)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise UnknownIdentifier(f"unknown function {text!r} at offset {off}")
                self.advance()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text]
                if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
                    raise ExprSyntaxError(f"wrong number of arguments to {text}", off)
                return Call(text, tuple(args))
            if text not in ALL_VARS:
                raise UnknownIdentifier(f"unknown identifier {text!r} at offset {off}")
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", off)


def parse(src: str) -> Expr:
    """Parse ``src`` into an expression tree."""
    return _Parser(src).parse()


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    return frozenset().union(*(free_vars(a) for a in e.args))


def check_slot(e: Expr, slot: str) -> None:
    """Reject variables not allowed in the given problem slot (F, g, h, exact)."""
    extra = free_vars(e) - SLOT_VARS[slot]
    if extra:
        raise UnknownIdentifier(f"{slot} may not use {sorted(extra)}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def to_source(e: Expr) -> str:
    """Print an expression so that ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        return text if e.value >= 0 else f"({text})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Neg):
        return f"-({to_source(e.arg)})"
    left, right = to_source(e.left), to_source(e.right)
    p = _PREC[e.op]
    if isinstance(e.left, (BinOp, Neg)) and (
        isinstance(e.left, Neg) or _PREC[e.left.op] < p or (e.op == "^")
    ):
        left = f"({left})"
    if isinstance(e.right, BinOp) and (_PREC[e.right.op] < p or (_PREC[e.right.op] == p and e.op != "^")):
        right = f"({right})"
    return f"{left} {e.op} {right}"


def _env_value(env: Mapping, name: str):
    if name in env:
        return env[name]
    if name == "absz2":
        total = 0.0
        for c in COORD_VARS:
            if c in env:
                total = total + np.square(env[c])
        if not any(c in env for c in COORD_VARS):
            raise UnboundVariable(name)
        return total
    if name in ("absz12", "absz22"):
        j = name[4]
        try:
            return np.square(env[f"x{j}"]) + np.square(env[f"y{j}"])
        except KeyError:
            raise UnboundVariable(name) from None
    raise UnboundVariable(name)


def evaluate(e: Expr, env: Mapping):
    """Evaluate ``e`` with variables bound in ``env`` (scalars or broadcastable arrays)."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return _env_value(env, e.name)
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                return np.divide(a, b)
            return np.power(a, b)
    args = [evaluate(a, env) for a in e.args]
    if e.func == "exp":
        with np.errstate(over="ignore"):
            return np.exp(args[0])
    if e.func == "log":
        if np.any(np.asarray(args[0]) <= 0):
            raise DomainError("log of a nonpositive argument")
        return np.log(args[0])
    if e.func == "abs":
        return np.abs(args[0])
    red = np.minimum if e.func == "min" else np.maximum
    out = args[0]
    for a in args[1:]:
        out = red(out, a)
    return out


def eval_scalar(e: Expr, env: Mapping) -> float:
    return float(evaluate(e, env))


def coord_env(points: np.ndarray, **extra) -> dict:
    """Variable bindings for real coordinates of shape (..., 2n)."""
    points = np.asarray(points, dtype=float)
    env = dict(extra)
    for j in range(points.shape[-1]):
        env[COORD_VARS[j]] = points[..., j]
    return env


class CompiledExpr:
    """A parsed expression bound to a slot, callable as f(t, points, r)."""

    def __init__(self, src, slot: str):
        self.src = src if isinstance(src, str) else to_source(src)
        self.expr = parse(src) if isinstance(src, str) else src
        self.slot = slot
        check_slot(self.expr, slot)

    def __call__(self, t, points, r=None):
        points = np.asarray(points, dtype=float)
        env = coord_env(points)
        if "t" in SLOT_VARS[self.slot]:
            env["t"] = t
        if r is not None:
            env["r"] = r
        value = evaluate(self.expr, env)
        shape = np.broadcast_shapes(points.shape[:-1], np.shape(t), np.shape(r) if r is not None else ())
        return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()

    def uses(self, name: str) -> bool:
        return name in free_vars(self.expr)

    def __repr__(self):
        return f"CompiledExpr({self.src!r}, slot={self.slot!r})"


def validate_monotone_r(e, points, times, r_range=(-10.0, 10.0), ladder=17, tol=1e-12):
    """Sampled check that ``e`` is nondecreasing in r.

    ``points``/``times`` define the sample box; r runs over a ``ladder``-point
    ladder in ``r_range`` at every sample. Returns a CheckReport whose margin
    is the smallest increment observed between consecutive rungs.
    """
    from .fields import CheckReport

    if isinstance(e, str):
        e = parse(e)
    points = np.asarray(points, dtype=float).reshape(-1, np.shape(points)[-1])
    times = np.atleast_1d(np.asarray(times, dtype=float))
    rs = np.linspace(r_range[0], r_range[1], ladder)
    P = np.broadcast_to(points[None, :, None, :], (times.size, points.shape[0], ladder, points.shape[1]))
    env = coord_env(P, t=times[:, None, None], r=rs[None, None, :])
    vals = np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), P.shape[:-1])
    inc = np.diff(vals, axis=-1).reshape(-1)
    if inc.size == 0:
        return CheckReport(True, math.inf, -1, tol, None)
    return CheckReport.from_margins(inc, tol, keep=False)
