"""Scalar expression language for coefficients, growth terms and initial data.

Expressions are written in ordinary infix notation over the variables
``x, y, t, p`` and the derived radius ``r``::

    >>> expr = parse("1 + 2*3")
    >>> evaluate(expr, Env())
    7.0

Evaluation works on floats or on numpy arrays (elementwise), so one parsed
tree serves both point checks and whole-grid sampling.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

VARIABLES = ("x", "y", "t", "p", "r")
CONSTANTS = {"pi": math.pi, "e": math.e}
# name -> (min args, max args)
FUNCTIONS = {
    "sin": (1, 1),
    "cos": (1, 1),
    "tanh": (1, 1),
    "cosh": (1, 1),
    "exp": (1, 1),
    "log": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

Value = Union[float, np.ndarray]


class ExprError(Exception):
    """Base class for all expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, source: str, offset: int, expected: str, found: str | None = None):
        self.source = source
        self.offset = offset
        self.expected = expected
        if found is None:
            found = repr(source[offset]) if offset < len(source) else "end of input"
        super().__init__(f"at offset {offset}: expected {expected}, found {found}")


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at offset {offset}")


class UnboundVariableError(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is not bound")


class ExprDomainError(ExprError):
    """Raised for log/sqrt of a negative argument or division by zero."""


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Const, Neg, BinOp, Call]


@dataclass(frozen=True)
class Env:
    """Variable bindings. ``r`` is derived from ``x`` and ``y``."""

    x: Value | None = None
    y: Value | None = None
    t: Value | None = None
    p: Value | None = None

    def lookup(self, name: str) -> Value:
        if name == "r":
            if self.x is None:
                raise UnboundVariableError("r")
            if self.y is None:
                return np.abs(self.x) if isinstance(self.x, np.ndarray) else abs(self.x)
            return np.sqrt(self.x * self.x + self.y * self.y)
        value = getattr(self, name)
        if value is None:
            raise UnboundVariableError(name)
        return value


# ------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "ident", "op", "end"
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(source, pos, "a number, identifier, operator or parenthesis")
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


# ------------------------------------------------------------------ parser


class _Parser:
    # expr  := term (("+" | "-") term)*
    # term  := unary (("*" | "/") unary)*
    # unary := "-" unary | power
    # power := atom ("^" unary)?        right-associative via unary -> power
    # atom  := number | const | var | func "(" expr ("," expr)* ")" | "(" expr ")"

    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def fail(self, expected: str):
        raise ExprSyntaxError(self.source, self.tok.offset, expected)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.fail(repr(text))

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            self.fail("an operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            name = tok.text
            if name in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                lo, hi = FUNCTIONS[name]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    want = str(lo) if lo == hi else f"at least {lo}"
                    raise ExprSyntaxError(
                        self.source, tok.offset, f"{want} argument(s) to {name}", str(len(args))
                    )
                return Call(name, tuple(args))
            if name in CONSTANTS:
                return Const(name)
            if name in VARIABLES:
                return Var(name)
            raise UnknownIdentifierError(name, tok.offset)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        self.fail("a number, identifier or '('")


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    if not source or not source.strip():
        raise ExprSyntaxError(source or "", 0, "an expression")
    return _Parser(source).parse()


# -------------------------------------------------------------- evaluation


def _check(cond, message: str):
    if np.any(cond):
        raise ExprDomainError(message)


def _log(v):
    _check(np.less_equal(v, 0.0), "log of a non-positive argument")
    return np.log(v) if isinstance(v, np.ndarray) else math.log(v)


def _sqrt(v):
    _check(np.less(v, 0.0), "sqrt of a negative argument")
    return np.sqrt(v) if isinstance(v, np.ndarray) else math.sqrt(v)


def _unary(npf, mf) -> Callable[[Value], Value]:
    def f(v):
        return npf(v) if isinstance(v, np.ndarray) else mf(v)

    return f


def _reduce(npf, pyf):
    def f(*vs):
        if any(isinstance(v, np.ndarray) for v in vs):
            out = vs[0]
            for v in vs[1:]:
                out = npf(out, v)
            return out
        return pyf(vs)

    return f


_FUNC_IMPL = {
    "sin": _unary(np.sin, math.sin),
    "cos": _unary(np.cos, math.cos),
    "tanh": _unary(np.tanh, math.tanh),
    "cosh": _unary(np.cosh, math.cosh),
    "exp": _unary(np.exp, math.exp),
    "log": _log,
    "sqrt": _sqrt,
    "abs": _unary(np.abs, abs),
    "min": _reduce(np.minimum, min),
    "max": _reduce(np.maximum, max),
}


def _div(a, b):
    _check(np.equal(b, 0.0), "division by zero")
    return a / b


def _pow(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.power(np.asarray(a, dtype=float), b)
        _check(~np.isfinite(out) & np.isfinite(a) & np.isfinite(b), "invalid power")
        return out
    try:
        out = math.pow(a, b)
    except (ValueError, ZeroDivisionError) as exc:
        raise ExprDomainError(f"invalid power {a}^{b}") from exc
    return out


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}


def evaluate(expr: Expr, env: Env) -> Value:
    """Evaluate ``expr`` under ``env``.

    Operands are evaluated left to right. Array bindings broadcast.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return env.lookup(expr.name)
    if isinstance(expr, Const):
        return CONSTANTS[expr.name]
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, env)
    if isinstance(expr, BinOp):
        left = evaluate(expr.left, env)
        right = evaluate(expr.right, env)
        return _BINOPS[expr.op](left, right)
    if isinstance(expr, Call):
        args = [evaluate(a, env) for a in expr.args]
        return _FUNC_IMPL[expr.func](*args)
    raise TypeError(f"not an expression node: {expr!r}")


def compile_expr(expr: Expr) -> Callable[[Env], Value]:
    """Turn ``expr`` into a closure; same results as :func:`evaluate`, less dispatch."""
    if isinstance(expr, Num):
        value = expr.value
        return lambda env: value
    if isinstance(expr, Var):
        name = expr.name
        if name == "r":
            return lambda env: env.lookup("r")

        def var(env):
            v = getattr(env, name)
            if v is None:
                raise UnboundVariableError(name)
            return v

        return var
    if isinstance(expr, Const):
        value = CONSTANTS[expr.name]
        return lambda env: value
    if isinstance(expr, Neg):
        inner = compile_expr(expr.operand)
        return lambda env: -inner(env)
    if isinstance(expr, BinOp):
        left, right = compile_expr(expr.left), compile_expr(expr.right)
        op = _BINOPS[expr.op]
        return lambda env: op(left(env), right(env))
    if isinstance(expr, Call):
        args = [compile_expr(a) for a in expr.args]
        fn = _FUNC_IMPL[expr.func]
        if len(args) == 1:
            (arg,) = args
            return lambda env: fn(arg(env))
        return lambda env: fn(*[a(env) for a in args])
    raise TypeError(f"not an expression node: {expr!r}")


def free_variables(expr: Expr) -> frozenset[str]:
    """Names of the variables appearing in ``expr`` (``r`` kept as itself)."""
    if isinstance(expr, Var):
        return frozenset([expr.name])
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, BinOp):
        return free_variables(expr.left) | free_variables(expr.right)
    if isinstance(expr, Call):
        out = frozenset()
        for a in expr.args:
            out |= free_variables(a)
        return out
    return frozenset()


def depends_on(expr: Expr, name: str) -> bool:
    names = free_variables(expr)
    if name in ("x", "y") and "r" in names:
        return True
    return name in names


def to_source(expr: Expr) -> str:
    """Render ``expr`` back to text. Fully parenthesized, so it re-parses to the same tree."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, (Var, Const)):
        return expr.name
    if isinstance(expr, Neg):
        return f"(-{to_source(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({to_source(expr.left)} {expr.op} {to_source(expr.right)})"
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(to_source(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


def fd_derivative(
    expr: Expr, env: Env, var: str, order: int = 1, h: float | np.ndarray | None = None
) -> Value:
    """Centered finite-difference derivative of ``expr`` in ``var``.

    Default step is ``1e-5 * max(1, |var|)``.
    """
    if var not in ("x", "y", "t", "p"):
        raise ValueError(f"cannot differentiate with respect to {var!r}")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x0 = env.lookup(var)
    if h is None:
        h = 1e-5 * np.maximum(1.0, np.abs(x0))
        if not isinstance(x0, np.ndarray):
            h = float(h)
    f_plus = evaluate(expr, replace(env, **{var: x0 + h}))
    f_minus = evaluate(expr, replace(env, **{var: x0 - h}))
    if order == 1:
        return (f_plus - f_minus) / (2 * h)
    f0 = evaluate(expr, env)
    return (f_plus - 2 * f0 + f_minus) / (h * h)
