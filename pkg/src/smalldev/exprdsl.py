"""Scalar coefficient expressions in ``t, x1..xd``.

Grammar, loosest to tightest binding::

    + -        binary, left associative
    * /        binary, left associative
    -          unary prefix
    ^          binary, right associative
    f(e)       calls from FUNCTIONS
    atoms      decimal literals, t, x1..xd, parenthesised expressions

Expressions are immutable trees; they can be printed back to text,
evaluated at a point, differentiated symbolically and compiled to Python
source for the numba and numpy kernels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs", "log")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    pass


class DimensionError(ParseError):
    pass


class DomainError(ExprError):
    """Evaluation left the real domain: NaN, infinity, negative sqrt, 1/0."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in {to_text(subexpr)!r}")
        self.subexpr = subexpr


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, slots=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str  # "t" or "x<i>"

    @property
    def index(self) -> int:
        """0 for ``t``, i for ``xi``."""
        return 0 if self.name == "t" else int(self.name[1:])


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Binary(Expr):
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class Call(Expr):
    fn: str
    arg: Expr


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"x([1-9][0-9]*)")

_INFIX = {"+": (10, 11), "-": (10, 11), "*": (20, 21), "/": (20, 21), "^": (41, 40)}
_UNARY_BP = 30


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", _byte_offset(text, start))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), _byte_offset(text, m.start(kind))))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(text, n)))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.next()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", off)

    def expression(self, min_bp: int = 0) -> Expr:
        lhs = self.prefix()
        while True:
            kind, val, _ = self.peek()
            if kind != "op" or val not in _INFIX:
                break
            lbp, rbp = _INFIX[val]
            if lbp < min_bp:
                break
            self.next()
            lhs = Binary(val, lhs, self.expression(rbp))
        return lhs

    def prefix(self) -> Expr:
        kind, val, off = self.next()
        if kind == "num":
            value = float(val)
            if not math.isfinite(value):
                raise ParseError(f"literal {val} overflows", off)
            return Num(value)
        if kind == "name":
            if val == "t":
                return Var("t")
            m = _VAR.fullmatch(val)
            if m is not None:
                if int(m.group(1)) > self.dim:
                    raise DimensionError(
                        f"variable {val} exceeds dimension {self.dim}", off
                    )
                return Var(val)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expression()
                self.expect(")")
                return Call(val, arg)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "-":
            return Neg(self.expression(_UNARY_BP))
        if kind == "op" and val == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", off)


def parse(text: str, dim: int) -> Expr:
    """Parse ``text`` into an expression over ``t, x1..x<dim>``."""
    if dim < 0:
        raise ValueError("dim must be non-negative")
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if not text.strip():
        raise ParseError("empty expression", 0)
    p = _Parser(text, dim)
    e = p.expression()
    kind, val, off = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected {val!r}", off)
    return e


# --------------------------------------------------------------- printing

def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Num) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 0
    return 5


def _fmt_num(v: float) -> str:
    if v < 0 or math.copysign(1.0, v) < 0:
        return f"(-{repr(-v)})"
    return repr(v)


def to_text(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_text(e))`` rebuilds the same tree."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        return f"-{inner}" if _prec(e.arg) >= 3 else f"-({inner})"
    p = _prec(e)
    left, right = to_text(e.lhs), to_text(e.rhs)
    if e.op == "^":
        lwrap = _prec(e.lhs) <= p
        rwrap = _prec(e.rhs) < 3
    else:
        lwrap = _prec(e.lhs) < p
        rwrap = _prec(e.rhs) <= p
    if lwrap:
        left = f"({left})"
    if rwrap:
        right = f"({right})"
    return f"{left}{e.op}{right}"


# ------------------------------------------------------------- evaluation

def variables(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, (Neg, Call)):
        return variables(e.arg)
    if isinstance(e, Binary):
        return variables(e.lhs) | variables(e.rhs)
    return frozenset()


def max_index(e: Expr) -> int:
    idx = [int(v[1:]) for v in variables(e) if v != "t"]
    return max(idx, default=0)


def _is_int(v: float) -> bool:
    return math.isfinite(v) and v == math.floor(v)


def _check(value: float, e: Expr) -> float:
    if not math.isfinite(value):
        raise DomainError("non-finite result", e)
    return value


def evaluate(e: Expr, t: float, x) -> float:
    """Evaluate ``e`` at ``(t, x)`` in double precision.

    Raises :class:`DomainError` instead of returning NaN or infinity.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.name == "t":
            return float(t)
        i = e.index
        if i > len(x):
            raise ExprError(f"{e.name} needs a point of dimension >= {i}, got {len(x)}")
        return float(x[i - 1])
    if isinstance(e, Neg):
        return -evaluate(e.arg, t, x)
    if isinstance(e, Call):
        a = evaluate(e.arg, t, x)
        if e.fn == "sqrt":
            if a < 0:
                raise DomainError("sqrt of negative value", e)
            return math.sqrt(a)
        if e.fn == "log":
            if a <= 0:
                raise DomainError("log of non-positive value", e)
            return math.log(a)
        if e.fn == "abs":
            return abs(a)
        try:
            return _check(getattr(math, e.fn)(a), e)
        except OverflowError:
            raise DomainError("overflow", e) from None
    a = evaluate(e.lhs, t, x)
    b = evaluate(e.rhs, t, x)
    op = e.op
    if op == "+":
        return _check(a + b, e)
    if op == "-":
        return _check(a - b, e)
    if op == "*":
        return _check(a * b, e)
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero", e)
        return _check(a / b, e)
    if a < 0 and not _is_int(b):
        raise DomainError("negative base with non-integer exponent", e)
    if a == 0 and b < 0:
        raise DomainError("division by zero", e)
    try:
        return _check(a ** int(b) if _is_int(b) and abs(b) < 2**31 else a ** b, e)
    except OverflowError:
        raise DomainError("overflow", e) from None


# --------------------------------------------------------- differentiation

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _num(e: Expr) -> float | None:
    return e.value if isinstance(e, Num) else None


def _add(a: Expr, b: Expr) -> Expr:
    if _num(a) == 0.0:
        return b
    if _num(b) == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _num(b) == 0.0:
        return a
    if _num(a) == 0.0:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Binary("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _num(a) == 0.0 or _num(b) == 0.0:
        return _ZERO
    if _num(a) == 1.0:
        return b
    if _num(b) == 1.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _num(a) == 0.0:
        return _ZERO
    if _num(b) == 1.0:
        return a
    return Binary("/", a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _num(b) == 1.0:
        return a
    if _num(b) == 0.0:
        return _ONE
    return Binary("^", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value) if a.value != 0.0 else _ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def partial(e: Expr, var: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to ``var`` (``t`` or ``xi``)."""
    if var != "t" and _VAR.fullmatch(var) is None:
        raise ExprError(f"cannot differentiate with respect to {var!r}")
    return _d(e, var)


def _d(e: Expr, v: str) -> Expr:
    if isinstance(e, Num):
        return _ZERO
    if isinstance(e, Var):
        return _ONE if e.name == v else _ZERO
    if v not in variables(e):
        return _ZERO
    if isinstance(e, Neg):
        return _neg(_d(e.arg, v))
    if isinstance(e, Call):
        a, da = e.arg, _d(e.arg, v)
        if e.fn == "sin":
            outer = Call("cos", a)
        elif e.fn == "cos":
            outer = _neg(Call("sin", a))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "sqrt":
            return _div(da, _mul(Num(2.0), e))
        elif e.fn == "log":
            return _div(da, a)
        else:  # abs
            outer = _div(a, e)
        return _mul(outer, da)
    a, b = e.lhs, e.rhs
    if e.op == "+":
        return _add(_d(a, v), _d(b, v))
    if e.op == "-":
        return _sub(_d(a, v), _d(b, v))
    if e.op == "*":
        return _add(_mul(_d(a, v), b), _mul(a, _d(b, v)))
    if e.op == "/":
        return _div(_sub(_mul(_d(a, v), b), _mul(a, _d(b, v))), _pow(b, Num(2.0)))
    # power
    if v not in variables(b):
        return _mul(_mul(b, _pow(a, _sub(b, _ONE))), _d(a, v))
    return _mul(
        e, _add(_mul(_d(b, v), Call("log", a)), _div(_mul(b, _d(a, v)), a))
    )


# ------------------------------------------------------------ compilation

def to_source(e: Expr, flavor: str = "scalar") -> str:
    """Python source for ``e`` over names ``t`` and ``x``.

    ``scalar``: ``x`` is a 1-d vector and functions come from ``math``-like
    ``np`` scalars (numba friendly).  ``array``: ``x`` has shape ``(n, d)``
    and ``t`` broadcasts.
    """
    def go(e: Expr) -> str:
        if isinstance(e, Num):
            return repr(e.value) if e.value >= 0 else f"({e.value!r})"
        if isinstance(e, Var):
            if e.name == "t":
                return "t"
            i = e.index - 1
            return f"x[{i}]" if flavor == "scalar" else f"x[:, {i}]"
        if isinstance(e, Neg):
            return f"(-{go(e.arg)})"
        if isinstance(e, Call):
            fn = "np.abs" if e.fn == "abs" else f"np.{e.fn}"
            return f"{fn}({go(e.arg)})"
        if e.op == "^":
            b = e.rhs
            if isinstance(b, Num) and _is_int(b.value) and abs(b.value) < 64:
                return f"({go(e.lhs)} ** {int(b.value)})"
            if flavor == "array":
                return f"np.power({go(e.lhs)}, {go(b)})"
            return f"({go(e.lhs)} ** {go(b)})"
        return f"({go(e.lhs)} {e.op} {go(e.rhs)})"

    return go(e)


@lru_cache(maxsize=512)
def vectorized(e: Expr):
    """numpy callable ``f(t, x)`` with ``x`` of shape ``(n, d)``; returns shape ``(n,)``.

    Non-finite entries are left in the output for the caller to check.
    """
    src = f"def _f(t, x):\n    return {to_source(e, 'array')} + np.zeros(x.shape[0])\n"
    ns = {"np": np}
    exec(src, ns)
    f = ns["_f"]

    def call(t, x):
        with np.errstate(all="ignore"):
            return f(t, np.asarray(x, dtype=np.float64))

    return call
