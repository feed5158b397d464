"""Scalar expression language for drivers, terminal payoffs, barriers and constraints.

Grammar (standard infix, Pratt-parsed)::

    expr    := expr ('+' | '-') expr | expr ('*' | '/') expr | '-' expr
             | expr '^' expr | NUMBER | VARIABLE | NAME '(' args ')' | '(' expr ')'

Precedence, tightest first: ``^`` (right associative), unary minus, ``* /``,
``+ -``.  Variables are ``t``, ``x``, ``y`` and ``z``; each usage site restricts
the subset it accepts.  Named functions are ``abs sin cos exp ln sqrt pospart
negpart`` (one argument) and ``min max`` (two arguments).  There is no implicit
multiplication and no ``|v|`` notation: ``ry`` is an unknown identifier, not
``r*y``.

Evaluation accepts Python floats or numpy arrays for the variable bindings and
broadcasts, so a whole lattice level is evaluated in one call.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import EvaluationError, ExpressionError

VARIABLES = frozenset({"t", "x", "y", "z"})
UNARY_FUNCTIONS = frozenset({"abs", "sin", "cos", "exp", "ln", "sqrt", "pospart", "negpart"})
BINARY_FUNCTIONS = frozenset({"min", "max"})
BINARY_OPERATORS = frozenset({"+", "-", "*", "/", "^"})

# integer exponents up to this size are expanded into products
_MAX_INT_POWER = 64


class Expression:
    """Base class of the immutable expression tree."""

    __slots__ = ()

    def __call__(self, **bindings):
        return evaluate(self, bindings)

    def __str__(self) -> str:
        return format_expression(self)


@dataclass(frozen=True, slots=True)
class Num(Expression):
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0:
            # negative constants are spelled Unary("neg", Num(...)) so that
            # formatting and parsing stay inverse to each other
            raise ValueError(f"literal must be finite and nonnegative, got {self.value!r}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True, slots=True)
class Var(Expression):
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")


@dataclass(frozen=True, slots=True)
class Unary(Expression):
    op: str
    arg: Expression

    def __post_init__(self):
        if self.op != "neg" and self.op not in UNARY_FUNCTIONS:
            raise ValueError(f"unknown unary operator {self.op!r}")


@dataclass(frozen=True, slots=True)
class Binary(Expression):
    op: str
    left: Expression
    right: Expression

    def __post_init__(self):
        if self.op not in BINARY_OPERATORS and self.op not in BINARY_FUNCTIONS:
            raise ValueError(f"unknown binary operator {self.op!r}")


def constant(value: float) -> Expression:
    """Literal for any finite real; negative values become ``neg(|value|)``."""
    value = float(value)
    if value < 0 or (value == 0 and math.copysign(1.0, value) < 0):
        return Unary("neg", Num(-value))
    return Num(value)


def variables(e: Expression) -> frozenset[str]:
    """Names of all variables occurring in ``e``."""
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Unary):
        return variables(e.arg)
    if isinstance(e, Binary):
        return variables(e.left) | variables(e.right)
    return frozenset()


# ---------------------------------------------------------------------------
# lexer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)

_LEFT_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_PREFIX_BP = 30


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos or m.lastgroup is None:
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {source[bad]!r}", bad)
        tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, allowed: frozenset[str]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.allowed = allowed

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.advance()
        if tok.kind != "op" or tok.text != text:
            found = tok.text or "end of input"
            raise ExpressionError(f"expected {text!r}, found {found!r}", tok.pos)

    def parse(self, rbp: int = 0) -> Expression:
        left = self.nud(self.advance())
        while True:
            tok = self.peek()
            lbp = _LEFT_BP.get(tok.text, 0) if tok.kind == "op" else 0
            if lbp <= rbp:
                break
            self.advance()
            # '^' is right associative
            right = self.parse(lbp - 1 if tok.text == "^" else lbp)
            left = Binary(tok.text, left, right)
        return left

    def nud(self, tok: _Token) -> Expression:
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "-":
            return Unary("neg", self.parse(_PREFIX_BP))
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse()
            self.expect(")")
            return inner
        if tok.kind == "name":
            return self.name(tok)
        found = tok.text or "end of input"
        raise ExpressionError(f"unexpected {found!r}", tok.pos)

    def name(self, tok: _Token) -> Expression:
        name = tok.text
        if name in UNARY_FUNCTIONS or name in BINARY_FUNCTIONS:
            nxt = self.peek()
            if nxt.kind != "op" or nxt.text != "(":
                raise ExpressionError(f"function {name!r} must be called with parentheses", tok.pos)
            self.advance()
            args = [self.parse()]
            while self.peek().kind == "op" and self.peek().text == ",":
                self.advance()
                args.append(self.parse())
            self.expect(")")
            arity = 1 if name in UNARY_FUNCTIONS else 2
            if len(args) != arity:
                raise ExpressionError(f"{name} takes {arity} argument(s), got {len(args)}", tok.pos)
            if arity == 1:
                return Unary(name, args[0])
            return Binary(name, args[0], args[1])
        if name in VARIABLES:
            if name not in self.allowed:
                allowed = ", ".join(sorted(self.allowed)) or "none"
                raise ExpressionError(
                    f"variable {name!r} is not allowed here (allowed: {allowed})", tok.pos
                )
            return Var(name)
        raise ExpressionError(f"unknown identifier {name!r}", tok.pos)


def parse(source: str, allowed_vars=VARIABLES) -> Expression:
    """Parse ``source`` into an expression tree.

    Raises ExpressionError on syntax errors (with the character position),
    unknown identifiers and variables outside ``allowed_vars``.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExpressionError("empty expression")
    p = _Parser(source, frozenset(allowed_vars))
    e = p.parse()
    tok = p.peek()
    if tok.kind != "end":
        raise ExpressionError(f"unexpected {tok.text!r}", tok.pos)
    return e


# ---------------------------------------------------------------------------
# formatting

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expression) -> int:
    if isinstance(e, Binary):
        if e.op in ("+", "-"):
            return _PREC_ADD
        if e.op in ("*", "/"):
            return _PREC_MUL
        if e.op == "^":
            return _PREC_POW
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC_NEG
    return _PREC_ATOM


def _format_number(v: float) -> str:
    if v.is_integer() and v < 1e16:
        return str(int(v))
    return repr(v)


def format_expression(e: Expression) -> str:
    """Render ``e`` as source text; ``parse`` of the result rebuilds ``e`` exactly."""
    if isinstance(e, Num):
        return _format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = format_expression(e.arg)
            if _prec(e.arg) < _PREC_NEG:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({format_expression(e.arg)})"
    if isinstance(e, Binary):
        if e.op in BINARY_FUNCTIONS:
            return f"{e.op}({format_expression(e.left)}, {format_expression(e.right)})"
        p = _prec(e)
        left = format_expression(e.left)
        right = format_expression(e.right)
        if e.op == "^":
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) < p:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        if e.op in ("+", "-"):
            return f"{left} {e.op} {right}"
        return f"{left}{e.op}{right}"
    raise TypeError(f"not an expression: {e!r}")


format = format_expression  # noqa: A001 - public name mirrors parse/evaluate


# ---------------------------------------------------------------------------
# evaluation


def _small_int_exponent(e: Expression) -> int | None:
    sign = 1
    if isinstance(e, Unary) and e.op == "neg":
        sign, e = -1, e.arg
    if isinstance(e, Num) and e.value.is_integer() and e.value <= _MAX_INT_POWER:
        return sign * int(e.value)
    return None


def _int_power(base, k: int):
    if k == 0:
        return np.ones_like(base)
    result = base
    for _ in range(abs(k) - 1):
        result = result * base
    if k < 0:
        if np.any(result == 0):
            raise EvaluationError("division by zero in negative integer power")
        result = 1.0 / result
    return result


def _eval(e: Expression, env: Mapping[str, np.ndarray]):
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvaluationError(f"no binding for variable {e.name!r}") from None
    if isinstance(e, Unary):
        a = _eval(e.arg, env)
        op = e.op
        if op == "neg":
            return -a
        if op == "abs":
            return np.abs(a)
        if op == "sin":
            return np.sin(a)
        if op == "cos":
            return np.cos(a)
        if op == "exp":
            return np.exp(a)
        if op == "ln":
            if np.any(a <= 0):
                raise EvaluationError("ln of a nonpositive number")
            return np.log(a)
        if op == "sqrt":
            if np.any(a < 0):
                raise EvaluationError("sqrt of a negative number")
            return np.sqrt(a)
        if op == "pospart":
            return np.maximum(a, 0.0)
        if op == "negpart":
            return np.maximum(-a, 0.0)
    if isinstance(e, Binary):
        op = e.op
        if op == "^":
            k = _small_int_exponent(e.right)
            a = _eval(e.left, env)
            if k is not None:
                return _int_power(a, k)
            b = _eval(e.right, env)
            if np.ndim(b) == 0 and float(b).is_integer() and abs(b) <= _MAX_INT_POWER:
                return _int_power(a, int(b))
            if np.any(a < 0):
                raise EvaluationError("negative base with non-integer exponent")
            if np.any((a == 0) & (b <= 0)):
                raise EvaluationError("zero base with nonpositive exponent")
            pos = a > 0
            # a^b = exp(b ln a) for a > 0; np.power rounds it more accurately
            return np.where(pos, np.power(np.where(pos, a, 1.0), b), 0.0)
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(b == 0):
                raise EvaluationError("division by zero")
            return a / b
        if op == "min":
            return np.minimum(a, b)
        if op == "max":
            return np.maximum(a, b)
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expression, bindings: Mapping[str, object]):
    """Evaluate ``e`` under ``bindings`` in IEEE double precision.

    Scalars in, float out.  Any array binding makes the result an ndarray of
    the broadcast shape (constants are expanded to that shape).
    """
    env = {}
    shape: tuple[int, ...] = ()
    for name, value in bindings.items():
        arr = np.asarray(value, dtype=np.float64)
        env[name] = arr
        shape = np.broadcast_shapes(shape, arr.shape)
    with np.errstate(all="ignore"):
        out = _eval(e, env)
    if shape == ():
        return float(out)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), shape).copy()
