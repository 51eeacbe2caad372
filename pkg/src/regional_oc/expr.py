"""Arithmetic expression language for problem data.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | power ;
    power   = atom [ "^" unary ] ;          (* right associative *)
    atom    = number | ident | func "(" expr ")" | "(" expr ")" ;
    func    = "sin" | "cos" | "exp" | "sqrt" | "abs" | "log" ;
    ident   = "x1" .. "x9" | "a1" .. "a9" | "pi" | "e" ;
    number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;

``x<k>`` are state components and ``a<k>`` control components (1-based in the
source, 0-based in the tree). Trees are immutable and hashable; derivatives
are computed symbolically on the tree.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import EvalError, ExprSyntaxError, UnknownIdentifier

UNARY_OPS = ("neg", "sin", "cos", "exp", "sqrt", "abs", "log")
BINARY_OPS = ("+", "-", "*", "/", "^")
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs", "log")
CONSTANTS = {"pi": math.pi, "e": math.e}


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return pretty(self)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expr):
    kind: str  # "x" (state) or "a" (control)
    index: int  # 0-based


@dataclass(frozen=True, eq=True, repr=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


Number = Union[int, float]


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, ident, op, eof
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {source[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, source: str, n_state: int | None, n_control: int | None):
        self.toks = _tokenize(source)
        self.i = 0
        self.n_state = n_state
        self.n_control = n_control

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, expected):
        t = self.tok
        what = "end of input" if t.kind == "eof" else f"token {t.text!r}"
        raise ExprSyntaxError(f"unexpected {what}", t.line, t.col, expected)

    def _accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "eof":
            self._fail({"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._accept("-"):
            return Unary("neg", self.unary())
        if self._accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._accept("^"):
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Const(float(t.text))
        if t.kind == "ident":
            self.i += 1
            name = t.text
            if name in FUNCTIONS:
                if not self._accept("("):
                    self._fail({"("})
                arg = self.expr()
                if not self._accept(")"):
                    self._fail({")", "+", "-", "*", "/", "^"})
                return Unary(name, arg)
            if name in CONSTANTS:
                return Const(CONSTANTS[name])
            m = re.fullmatch(r"([xa])([1-9])", name)
            if m is None:
                raise UnknownIdentifier(f"unknown identifier {name!r}", t.line, t.col)
            kind, idx = m.group(1), int(m.group(2)) - 1
            limit = self.n_state if kind == "x" else self.n_control
            if limit is not None and idx >= limit:
                raise UnknownIdentifier(
                    f"identifier {name!r} exceeds declared dimension {limit}",
                    t.line,
                    t.col,
                )
            return Var(kind, idx)
        if self._accept("("):
            e = self.expr()
            if not self._accept(")"):
                self._fail({")", "+", "-", "*", "/", "^"})
            return e
        self._fail({"number", "identifier", "(", "-"})


def parse(source: str, n_state: int | None = None, n_control: int | None = None) -> Expr:
    """Parse ``source`` into an expression tree.

    ``n_state``/``n_control`` restrict which ``x<k>``/``a<k>`` may appear;
    ``None`` allows any of the nine names.
    """
    if not isinstance(source, str):
        raise TypeError("expression source must be a string")
    return _Parser(source, n_state, n_control).parse()


# ---------------------------------------------------------------------------
# Pretty printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 3
    return 5


def pretty(e: Expr) -> str:
    """Render ``e`` with the minimal parentheses needed to reparse it."""
    if isinstance(e, Const):
        v = e.value
        if math.isinf(v) or math.isnan(v):
            raise ValueError("non-finite constant cannot be printed")
        s = repr(float(v))
        return f"({s})" if s.startswith("-") else s
    if isinstance(e, Var):
        return f"{e.kind}{e.index + 1}"
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = pretty(e.arg)
            if _prec(e.arg) < 3:
                inner = f"({inner})"
            return "-" + inner
        return f"{e.op}({pretty(e.arg)})"
    p = _PREC[e.op]
    left, right = pretty(e.left), pretty(e.right)
    if e.op == "^":
        if _prec(e.left) <= 4:
            left = f"({left})"
        if _prec(e.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


# ---------------------------------------------------------------------------
# Smart constructors (constant folding only, no CAS)


def add(u: Expr, v: Expr) -> Expr:
    if isinstance(u, Const) and isinstance(v, Const):
        return Const(u.value + v.value)
    if isinstance(u, Const) and u.value == 0:
        return v
    if isinstance(v, Const) and v.value == 0:
        return u
    return Binary("+", u, v)


def sub(u: Expr, v: Expr) -> Expr:
    if isinstance(u, Const) and isinstance(v, Const):
        return Const(u.value - v.value)
    if isinstance(v, Const) and v.value == 0:
        return u
    if isinstance(u, Const) and u.value == 0:
        return neg(v)
    return Binary("-", u, v)


def mul(u: Expr, v: Expr) -> Expr:
    if isinstance(u, Const) and isinstance(v, Const):
        return Const(u.value * v.value)
    for a, b in ((u, v), (v, u)):
        if isinstance(a, Const):
            if a.value == 0:
                return Const(0.0)
            if a.value == 1:
                return b
    return Binary("*", u, v)


def div(u: Expr, v: Expr) -> Expr:
    if isinstance(u, Const) and u.value == 0:
        return Const(0.0)
    if isinstance(v, Const) and v.value == 1:
        return u
    return Binary("/", u, v)


def neg(u: Expr) -> Expr:
    if isinstance(u, Const):
        return Const(-u.value)
    if isinstance(u, Unary) and u.op == "neg":
        return u.arg
    return Unary("neg", u)


def power(u: Expr, v: Expr) -> Expr:
    if isinstance(v, Const) and v.value == 1:
        return u
    if isinstance(v, Const) and v.value == 0:
        return Const(1.0)
    return Binary("^", u, v)


def func(name: str, u: Expr) -> Expr:
    return Unary(name, u)


# ---------------------------------------------------------------------------
# Introspection


@lru_cache(maxsize=None)
def variables(e: Expr) -> frozenset:
    """Set of ``(kind, index)`` pairs referenced by ``e``."""
    if isinstance(e, Var):
        return frozenset({(e.kind, e.index)})
    if isinstance(e, Unary):
        return variables(e.arg)
    if isinstance(e, Binary):
        return variables(e.left) | variables(e.right)
    return frozenset()


def depends_on_state(e: Expr) -> bool:
    return any(k == "x" for k, _ in variables(e))


def uses_op(e: Expr, op: str) -> bool:
    if isinstance(e, Unary):
        return e.op == op or uses_op(e.arg, op)
    if isinstance(e, Binary):
        return e.op == op or uses_op(e.left, op) or uses_op(e.right, op)
    return False


def max_index(e: Expr, kind: str) -> int:
    """Largest 0-based index of the given variable kind, or -1."""
    return max((i for k, i in variables(e) if k == kind), default=-1)


# ---------------------------------------------------------------------------
# Symbolic differentiation


@lru_cache(maxsize=None)
def diff(e: Expr, kind: str, index: int) -> Expr:
    """Derivative of ``e`` with respect to variable ``kind<index>``."""
    if (kind, index) not in variables(e):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0)
    if isinstance(e, Unary):
        u = e.arg
        du = diff(u, kind, index)
        if e.op == "neg":
            return neg(du)
        if e.op == "sin":
            return mul(func("cos", u), du)
        if e.op == "cos":
            return mul(neg(func("sin", u)), du)
        if e.op == "exp":
            return mul(e, du)
        if e.op == "sqrt":
            return div(du, mul(Const(2.0), e))
        if e.op == "abs":
            # u/|u| is undefined at 0, which is the intended failure mode
            return mul(du, div(u, e))
        if e.op == "log":
            return div(du, u)
        raise ValueError(f"unknown unary op {e.op}")
    u, v = e.left, e.right
    du, dv = diff(u, kind, index), diff(v, kind, index)
    if e.op == "+":
        return add(du, dv)
    if e.op == "-":
        return sub(du, dv)
    if e.op == "*":
        return add(mul(du, v), mul(u, dv))
    if e.op == "/":
        return div(sub(mul(du, v), mul(u, dv)), mul(v, v))
    if e.op == "^":
        if isinstance(v, Const):
            return mul(mul(v, power(u, Const(v.value - 1.0))), du)
        if isinstance(u, Const):
            log_u = Const(math.log(u.value)) if u.value > 0 else func("log", u)
            return mul(mul(e, log_u), dv)
        return mul(e, add(mul(dv, func("log", u)), div(mul(v, du), u)))
    raise ValueError(f"unknown binary op {e.op}")


def gradient_exprs(e: Expr, kind: str, n: int) -> tuple[Expr, ...]:
    return tuple(diff(e, kind, i) for i in range(n))


# ---------------------------------------------------------------------------
# Code generation to Python closures


def _py_source(e: Expr, vector: bool) -> str:
    m = "_np" if vector else "_m"
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"{e.kind}[{e.index}]"
    if isinstance(e, Unary):
        a = _py_source(e.arg, vector)
        if e.op == "neg":
            return f"(-{a})"
        name = "absolute" if (e.op == "abs" and vector) else ("fabs" if e.op == "abs" else e.op)
        return f"{m}.{name}({a})"
    l, r = _py_source(e.left, vector), _py_source(e.right, vector)
    if e.op == "^":
        return f"{m}.{'power' if vector else 'pow'}({l}, {r})"
    if e.op == "/" and vector:
        return f"{m}.divide({l}, {r})"
    return f"({l} {e.op} {r})"


@lru_cache(maxsize=None)
def scalar_function(e: Expr):
    """Compile ``e`` into ``f(x, a) -> float`` using :mod:`math` (fast path)."""
    src = f"lambda x, a: {_py_source(e, vector=False)}"
    return eval(src, {"_m": math})  # noqa: S307 - source is generated from the tree


@lru_cache(maxsize=None)
def vector_function(e: Expr):
    """Compile ``e`` into ``f(x, a) -> ndarray`` broadcasting over numpy arrays."""
    src = f"lambda x, a: {_py_source(e, vector=True)}"
    return eval(src, {"_np": np})  # noqa: S307


def _check_dims(e: Expr, x, a) -> None:
    if max_index(e, "x") >= len(x) or max_index(e, "a") >= len(a):
        raise ValueError("input vectors do not match the variables of the expression")


def evaluate(e: Expr, state: Sequence[float] = (), control: Sequence[float] = ()) -> float:
    """Evaluate ``e`` in IEEE double precision.

    Raises :class:`EvalError` on division by zero, domain errors, overflow or a
    non-finite result.
    """
    x = [float(v) for v in state]
    a = [float(v) for v in control]
    _check_dims(e, x, a)
    try:
        val = scalar_function(e)(x, a)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise EvalError(f"evaluation of {pretty(e)} failed: {exc}") from None
    if not math.isfinite(val):
        raise EvalError(f"evaluation of {pretty(e)} produced {val}")
    return float(val)


def evaluate_array(e: Expr, state, control, strict: bool = True) -> np.ndarray:
    """Vectorised evaluation; each of ``state``/``control`` is a sequence of
    arrays (or scalars) that broadcast together.

    With ``strict=False`` floating point errors are silenced and the caller is
    responsible for checking the result for non-finite entries.
    """
    x = [np.asarray(v, dtype=float) for v in state]
    a = [np.asarray(v, dtype=float) for v in control]
    _check_dims(e, x, a)
    fn = vector_function(e)
    shape = np.broadcast_shapes(*(v.shape for v in x + a))
    if not strict:
        with np.errstate(all="ignore"):
            out = np.asarray(fn(x, a), dtype=float)
        return np.broadcast_to(out, shape)
    try:
        with np.errstate(all="raise", under="ignore"):
            out = np.asarray(fn(x, a), dtype=float)
    except (FloatingPointError, ZeroDivisionError) as exc:
        raise EvalError(f"evaluation of {pretty(e)} failed: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise EvalError(f"evaluation of {pretty(e)} produced non-finite values")
    return np.broadcast_to(out, shape)


def grad_state(e: Expr, state: Sequence[float], control: Sequence[float] = ()) -> np.ndarray:
    """Exact gradient of ``e`` with respect to the state vector."""
    n = len(state)
    return np.array([evaluate(diff(e, "x", i), state, control) for i in range(n)])


def grad_control(e: Expr, state: Sequence[float], control: Sequence[float]) -> np.ndarray:
    m = len(control)
    return np.array([evaluate(diff(e, "a", i), state, control) for i in range(m)])


# ---------------------------------------------------------------------------
# Postfix bytecode for the compiled kernels

OP_CONST, OP_X, OP_A = 0, 1, 2
OPCODES = {
    "neg": 3, "+": 4, "-": 5, "*": 6, "/": 7, "^": 8,
    "sin": 9, "cos": 10, "exp": 11, "sqrt": 12, "abs": 13, "log": 14,
}


def bytecode(e: Expr) -> tuple[list[int], list[int], list[float], int]:
    """Return ``(ops, args, consts, max_stack_depth)`` in postfix order."""
    ops: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    depth = [0, 0]

    def push(d):
        depth[0] += d
        depth[1] = max(depth[1], depth[0])

    def emit(node: Expr) -> None:
        if isinstance(node, Const):
            ops.append(OP_CONST)
            args.append(len(consts))
            consts.append(float(node.value))
            push(1)
        elif isinstance(node, Var):
            ops.append(OP_X if node.kind == "x" else OP_A)
            args.append(node.index)
            push(1)
        elif isinstance(node, Unary):
            emit(node.arg)
            ops.append(OPCODES[node.op])
            args.append(0)
        else:
            emit(node.left)
            emit(node.right)
            ops.append(OPCODES[node.op])
            args.append(0)
            push(-1)

    emit(e)
    return ops, args, consts, depth[1]


# ---------------------------------------------------------------------------
# Problem-level expression bundle

REGION_LABELS = ("1", "2", "H")


@dataclass(frozen=True)
class ExprSet:
    """Dynamics, running costs and interface function of a regional problem.

    ``dynamics[label]`` is a tuple of ``n_state`` expressions, ``costs[label]``
    a scalar expression, for each label in ``{"1", "2", "H"}``.
    """

    n_state: int
    dynamics: dict
    costs: dict
    psi: Expr

    def __post_init__(self):
        if set(self.dynamics) != set(REGION_LABELS) or set(self.costs) != set(REGION_LABELS):
            raise ValueError("region labels must be exactly {'1', '2', 'H'}")
        for lab, f in self.dynamics.items():
            if len(f) != self.n_state:
                raise ValueError(
                    f"dynamics of region {lab} has length {len(f)}, expected {self.n_state}"
                )
        if depends_on_control(self.psi):
            raise ValueError("the interface function may depend on the state only")


def depends_on_control(e: Expr) -> bool:
    return any(k == "a" for k, _ in variables(e))
