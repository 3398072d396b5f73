"""Scalar expressions of ``x1..xn``: parsing, evaluation and exact gradients.

Grammar (whitespace-insensitive)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' atom)?
    atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')' | '-' atom
    VAR    := 'x' [1-9][0-9]*
    FUNC   := sin | cos | exp | log | sqrt | abs

Gradients are computed with forward-mode dual numbers, one pass per variable.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "ExpressionError",
    "ParseError",
    "DomainError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expression",
    "parse",
    "evaluate",
    "gradient",
    "to_text",
    "max_index",
    "as_function",
    "Dual",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    """Invalid expression text.

    ``kind`` is one of ``"syntax"``, ``"unknown identifier"`` or ``"arity"``;
    ``offset`` is the position in the input where the problem was detected.
    """

    def __init__(self, message: str, offset: int, kind: str = "syntax"):
        super().__init__(f"{kind} error at offset {offset}: {message}")
        self.offset = offset
        self.kind = kind


class DomainError(ExpressionError, ArithmeticError):
    pass


# --- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("variable indices start at 1")


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Expression"


Expression = Union[Num, Var, Neg, BinOp, Call]


# --- tokenizer --------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"x[1-9][0-9]*\Z")


@dataclass(frozen=True)
class _Token:
    kind: str  # num, var, func, op, end
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tok = m.group()
        if kind == "name":
            if _VAR_RE.match(tok):
                kind = "var"
            elif tok in FUNCTIONS:
                kind = "func"
            else:
                raise ParseError(f"unknown identifier {tok!r}", pos, "unknown identifier")
        if kind != "ws":
            tokens.append(_Token(kind, tok, pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def _unexpected(self) -> ParseError:
        t = self.tok
        what = "end of input" if t.kind == "end" else repr(t.text)
        return ParseError(f"unexpected {what}", t.offset)

    def _expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            if text == ")" and self.tok.text == ",":
                raise ParseError("functions take exactly one argument", self.tok.offset, "arity")
            raise self._unexpected()
        self.pos += 1

    def parse(self) -> Expression:
        node = self.expr()
        if self.tok.kind != "end":
            raise self._unexpected()
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.pos += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.pos += 1
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expression:
        node = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.pos += 1
            node = BinOp("^", node, self.atom())
        return node

    def atom(self) -> Expression:
        t = self.tok
        if t.kind == "num":
            self.pos += 1
            return Num(float(t.text))
        if t.kind == "var":
            self.pos += 1
            return Var(int(t.text[1:]))
        if t.kind == "func":
            self.pos += 1
            self._expect("(")
            if self.tok.kind == "op" and self.tok.text == ")":
                raise ParseError(f"{t.text} takes exactly one argument", self.tok.offset, "arity")
            arg = self.expr()
            self._expect(")")
            return Call(t.text, arg)
        if t.kind == "op" and t.text == "(":
            self.pos += 1
            node = self.expr()
            self._expect(")")
            return node
        if t.kind == "op" and t.text == "-":
            self.pos += 1
            return Neg(self.atom())
        raise self._unexpected()


def parse(text: str) -> Expression:
    """Parse ``text`` into an expression tree; raises :class:`ParseError`."""
    return _Parser(text).parse()


def to_text(e: Expression) -> str:
    """Render ``e`` back to text that :func:`parse` accepts."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return f"(-({to_text(e.arg)}))"
    if isinstance(e, BinOp):
        return f"(({to_text(e.left)}){e.op}({to_text(e.right)}))"
    if isinstance(e, Call):
        return f"{e.name}({to_text(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


def max_index(e: Expression) -> int:
    """Largest variable index referenced by ``e`` (0 for constants)."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Neg | Call):
        return max_index(e.arg)
    if isinstance(e, BinOp):
        return max(max_index(e.left), max_index(e.right))
    return 0


def _constant_value(e: Expression) -> float | None:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg):
        v = _constant_value(e.arg)
        return None if v is None else -v
    return None


# --- dual numbers -----------------------------------------------------------


class Dual:
    """``val + der * eps`` with ``eps**2 == 0``."""

    __slots__ = ("val", "der")

    def __init__(self, val: float, der: float = 0.0):
        self.val = val
        self.der = der

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __add__(self, other):
        other = _lift(other)
        return Dual(self.val + other.val, self.der + other.der)

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        return Dual(self.val - other.val, self.der - other.der)

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        return Dual(self.val * other.val, self.der * other.val + self.val * other.der)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        if other.val == 0.0:
            raise DomainError("division by zero")
        q = self.val / other.val
        return Dual(q, (self.der - q * other.der) / other.val)

    def __rtruediv__(self, other):
        return _lift(other) / self


def _lift(a) -> Dual:
    return a if isinstance(a, Dual) else Dual(float(a))


# value, derivative, domain check (returns a message when out of domain)
_FUNCS: dict[str, tuple[Callable, Callable, Callable]] = {
    "sin": (math.sin, math.cos, lambda a: None),
    "cos": (math.cos, lambda a: -math.sin(a), lambda a: None),
    "exp": (math.exp, math.exp, lambda a: None),
    "log": (math.log, lambda a: 1.0 / a, lambda a: "log of nonpositive value" if a <= 0 else None),
    "sqrt": (math.sqrt, lambda a: 0.5 / math.sqrt(a), lambda a: "sqrt of negative value" if a < 0 else None),
    "abs": (abs, lambda a: math.copysign(1.0, a) if a != 0 else 0.0, lambda a: None),
}


def _apply(name: str, a):
    fn, dfn, check = _FUNCS[name]
    x = a.val if isinstance(a, Dual) else a
    msg = check(x)
    if msg:
        raise DomainError(msg)
    try:
        val = fn(x)
        if not isinstance(a, Dual):
            return val
        if name == "sqrt" and x == 0.0:
            raise DomainError("sqrt is not differentiable at 0")
        return Dual(val, dfn(x) * a.der)
    except OverflowError as exc:
        raise DomainError(f"{name} overflow") from exc


def _power(base, exponent_node: Expression, env):
    k = _constant_value(exponent_node)
    if k is not None and float(k).is_integer():
        k = int(k)
        b = base.val if isinstance(base, Dual) else base
        if b == 0.0 and k < 0:
            raise DomainError("division by zero")
        try:
            val = b**k
        except OverflowError as exc:
            raise DomainError("power overflow") from exc
        if not isinstance(base, Dual):
            return float(val)
        der = k * b ** (k - 1) * base.der if k != 0 else 0.0
        return Dual(float(val), der)
    # general exponent: exp(b * log(a)), needs a > 0
    expo = _eval(exponent_node, env)
    b = base.val if isinstance(base, Dual) else base
    if b <= 0.0:
        raise DomainError("non-integer power of nonpositive base")
    return _apply("exp", expo * _apply("log", base))


def _eval(e: Expression, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.index - 1]
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Call):
        return _apply(e.name, _eval(e.arg, env))
    if isinstance(e, BinOp):
        left = _eval(e.left, env)
        if e.op == "^":
            return _power(left, e.right, env)
        right = _eval(e.right, env)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if isinstance(left, Dual) or isinstance(right, Dual):
            return _lift(left) / right
        if right == 0.0:
            raise DomainError("division by zero")
        return left / right
    raise TypeError(f"not an expression: {e!r}")


def _check_point(e: Expression, p: Sequence[float]) -> list[float]:
    pt = [float(v) for v in p]
    need = max_index(e)
    if len(pt) < need:
        raise ValueError(f"expression uses x{need} but the point has dimension {len(pt)}")
    return pt


def evaluate(e: Expression, p: Sequence[float]) -> float:
    """Value of ``e`` at ``p``; raises :class:`DomainError` outside the domain."""
    val = float(_eval(e, _check_point(e, p)))
    if not math.isfinite(val):
        raise DomainError("non-finite result")
    return val


def gradient(e: Expression, p: Sequence[float]) -> np.ndarray:
    """Exact gradient of ``e`` at ``p`` (length ``len(p)``)."""
    pt = _check_point(e, p)
    grad = np.zeros(len(pt))
    used = _variables(e)
    for i in range(len(pt)):
        if i + 1 not in used:
            continue
        env = [Dual(v, 1.0 if j == i else 0.0) for j, v in enumerate(pt)]
        out = _eval(e, env)
        grad[i] = out.der if isinstance(out, Dual) else 0.0
    if not np.all(np.isfinite(grad)):
        raise DomainError("non-finite derivative")
    return grad


def _variables(e: Expression) -> set[int]:
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Neg | Call):
        return _variables(e.arg)
    if isinstance(e, BinOp):
        return _variables(e.left) | _variables(e.right)
    return set()


def as_function(e: Expression | str) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Wrap an expression as ``fun(x) -> (value, gradient)``."""
    if isinstance(e, str):
        e = parse(e)

    def fun(x):
        return evaluate(e, x), gradient(e, x)

    fun.expression = e
    return fun
