"""A small arithmetic expression language for f(x, u), boundary data and subsolutions.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?
    atom   := number | name | name "(" expr ("," expr)* ")" | "(" expr ")"

Names are ``x1 .. xn`` and ``u``; functions are sqrt, abs, max, min, exp,
sin, cos and pow.  Evaluation is vectorized over numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ArgumentError, DomainError

MAX_BYTES = 64 * 1024
FUNCTIONS = {"sqrt": 1, "abs": 1, "exp": 1, "sin": 1, "cos": 1, "pow": 2, "max": -2, "min": -2}
# produced by differentiation only
INTERNAL = {"step": 1, "sign": 1}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


class ExprSyntaxError(ArgumentError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprEvalError(DomainError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


# ---------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    arg: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False)


Expr = Num | Var | Neg | Bin | Call


# ------------------------------------------------------------------- parser


def _is_var(name: str) -> bool:
    return name == "u" or re.fullmatch(r"x[1-9]\d*", name) is not None


class _Parser:
    def __init__(self, text: str, variables, internal: bool):
        self.text = text
        self.variables = variables
        self.internal = internal
        self.tokens = []
        i = 0
        while i < len(text):
            m = _TOKEN.match(text, i)
            if m is None or m.end() == i:
                if text[i:].strip() == "":
                    break
                j = i + len(text[i:]) - len(text[i:].lstrip())
                raise ExprSyntaxError(f"unexpected character {text[j]!r}", self._byte(j))
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), self._byte(m.start(kind))))
            i = m.end()
        self.end = len(text.encode("utf-8"))
        self.i = 0

    def _byte(self, char_index: int) -> int:
        return len(self.text[:char_index].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, self.end)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, op: str):
        kind, val, pos = self.take()
        if val != op or kind != "op":
            what = "end of input" if kind is None else repr(val)
            raise ExprSyntaxError(f"expected {op!r}, found {what}", pos)

    def parse(self):
        if not self.tokens:
            raise ExprSyntaxError("empty expression", 0)
        e = self.expr()
        kind, val, pos = self.peek()
        if kind is not None:
            raise ExprSyntaxError(f"unexpected {val!r}", pos)
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.take()
            left = Bin(op, left, self.term(), pos)
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            left = Bin(op, left, self.unary(), pos)
        return left

    def unary(self):
        kind, val, pos = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            arg = self.unary()
            if val == "+":
                return arg
            if isinstance(arg, Num):
                return Num(-arg.value, pos)
            return Neg(arg, pos)
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return Bin("^", base, self.unary(), pos)
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val), pos)
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(val, pos)
            if not _is_var(val) or (self.variables is not None and val not in self.variables):
                raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
            return Var(val, pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind is None else repr(val)
        raise ExprSyntaxError(f"unexpected {what}", pos)

    def call(self, name, pos):
        table = dict(FUNCTIONS, **INTERNAL) if self.internal else FUNCTIONS
        if name not in table:
            raise ExprSyntaxError(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = table[name]
        if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
            raise ExprSyntaxError(f"wrong number of arguments to {name}", pos)
        return Call(name, tuple(args), pos)


def parse_expression(text: str | bytes, variables=None, internal: bool = False):
    """Parse ``text`` into an AST.

    ``variables`` restricts the admissible names (e.g. ``{"x1", "x2", "u"}``);
    syntax errors carry the byte offset of the offending token.
    """
    if isinstance(text, bytes):
        if len(text) > MAX_BYTES:
            raise ArgumentError("expression longer than 64 KiB")
        text = text.decode("utf-8")
    elif len(text.encode("utf-8")) > MAX_BYTES:
        raise ArgumentError("expression longer than 64 KiB")
    return _Parser(text, variables, internal).parse()


# ---------------------------------------------------------------- printing


def to_string(e) -> str:
    """Canonical fully parenthesized form; parses back to an equal AST."""
    if isinstance(e, Num):
        return f"({e.value!r})" if e.value < 0 or (e.value == 0 and np.signbit(e.value)) else repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, Bin):
        return f"({to_string(e.left)}{e.op}{to_string(e.right)})"
    return f"{e.name}({','.join(to_string(a) for a in e.args)})"


def variables_of(e) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return variables_of(e.arg)
    if isinstance(e, Bin):
        return variables_of(e.left) | variables_of(e.right)
    if isinstance(e, Call):
        return set().union(*(variables_of(a) for a in e.args))
    return set()


# -------------------------------------------------------------- evaluation


def _checked(value, node, what):
    if not np.all(np.isfinite(value)):
        raise ExprEvalError(f"{what} is not finite", node.pos)
    return value


def evaluate(e, env: Mapping[str, np.ndarray | float]):
    """Evaluate with numpy broadcasting; non-finite results raise ExprEvalError."""
    with np.errstate(all="ignore"):
        return _eval(e, env)


def _eval(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.name not in env:
            raise ExprEvalError(f"variable {e.name!r} is not bound", e.pos)
        return env[e.name]
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Bin):
        a, b = _eval(e.left, env), _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(np.asarray(b) == 0):
                raise ExprEvalError("division by zero", e.pos)
            return _checked(np.divide(a, b), e, "quotient")
        return _checked(np.power(np.asarray(a, dtype=float), b), e, "power")
    args = [_eval(a, env) for a in e.args]
    name = e.name
    if name == "sqrt":
        if np.any(np.asarray(args[0]) < 0):
            raise ExprEvalError("sqrt of a negative number", e.pos)
        return np.sqrt(args[0])
    if name == "abs":
        return np.abs(args[0])
    if name == "exp":
        return _checked(np.exp(args[0]), e, "exp")
    if name == "sin":
        return np.sin(args[0])
    if name == "cos":
        return np.cos(args[0])
    if name == "pow":
        return _checked(np.power(np.asarray(args[0], dtype=float), args[1]), e, "pow")
    if name == "max":
        out = args[0]
        for a in args[1:]:
            out = np.maximum(out, a)
        return out
    if name == "min":
        out = args[0]
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    if name == "step":
        return np.where(np.asarray(args[0]) >= 0, 1.0, 0.0)
    if name == "sign":
        return np.sign(args[0])
    raise ExprEvalError(f"unknown function {name!r}", e.pos)


# --------------------------------------------------------- differentiation


def _num(v):
    return Num(float(v))


def _add(a, b):
    if isinstance(a, Num) and a.value == 0:
        return b
    if isinstance(b, Num) and b.value == 0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a, b):
    if isinstance(b, Num) and b.value == 0:
        return a
    if isinstance(a, Num) and a.value == 0:
        return _neg(b)
    return Bin("-", a, b)


def _mul(a, b):
    for x, y in ((a, b), (b, a)):
        if isinstance(x, Num):
            if x.value == 0:
                return _num(0)
            if x.value == 1:
                return y
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if isinstance(a, Num) and a.value == 0:
        return _num(0)
    if isinstance(b, Num) and b.value == 1:
        return a
    return Bin("/", a, b)


def _neg(a):
    if isinstance(a, Num):
        return _num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(a, b):
    if isinstance(b, Num) and b.value == 1:
        return a
    if isinstance(b, Num) and b.value == 0:
        return _num(1)
    return Bin("^", a, b)


def derivative(e, var: str):
    """Symbolic partial derivative; kinks of abs/max/min use one-sided choices."""
    if isinstance(e, Num):
        return _num(0)
    if isinstance(e, Var):
        return _num(1 if e.name == var else 0)
    if isinstance(e, Neg):
        return _neg(derivative(e.arg, var))
    if isinstance(e, Bin):
        a, b = e.left, e.right
        da, db = derivative(a, var), derivative(b, var)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if e.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, _num(2)))
        return _power_rule(a, b, da, db)
    args = e.args
    d = [derivative(a, var) for a in args]
    name = e.name
    if name == "sqrt":
        return _div(d[0], _mul(_num(2), e))
    if name == "abs":
        return _mul(Call("sign", (args[0],)), d[0])
    if name == "exp":
        return _mul(e, d[0])
    if name == "sin":
        return _mul(Call("cos", (args[0],)), d[0])
    if name == "cos":
        return _neg(_mul(Call("sin", (args[0],)), d[0]))
    if name == "pow":
        return _power_rule(args[0], args[1], d[0], d[1])
    if name in ("max", "min"):
        first, rest = args[0], args[1:]
        other = Call(name, rest) if len(rest) > 1 else rest[0]
        d_other = derivative(other, var)
        gap = _sub(first, other) if name == "max" else _sub(other, first)
        pick = Call("step", (gap,))
        return _add(_mul(pick, d[0]), _mul(_sub(_num(1), pick), d_other))
    if name in ("step", "sign"):
        return _num(0)
    raise ArgumentError(f"cannot differentiate {name}")


def _power_rule(a, b, da, db):
    if isinstance(db, Num) and db.value == 0:
        # d(a^c) = c a^(c-1) da
        cm1 = _sub(b, _num(1)) if not isinstance(b, Num) else _num(b.value - 1)
        return _mul(_mul(b, _pow(a, cm1)), da)
    # d(a^b) = a^b (db log a + b da / a), written without a log node via exp form
    raise ArgumentError("exponents depending on the variables are not supported")


def gradient(e, names):
    return [derivative(e, v) for v in names]


def hessian(e, names):
    g = gradient(e, names)
    return [[derivative(gi, v) for v in names] for gi in g]


# ------------------------------------------------------------ conveniences


def point_function(e, n: int):
    """Callable mapping points (N, n) to values (N,), for expressions in x only."""
    names = [f"x{i + 1}" for i in range(n)]
    if "u" in variables_of(e):
        raise ArgumentError("expression depends on u where only x is allowed")

    def fn(x):
        x = np.asarray(x, dtype=float)
        env = {nm: x[:, i] for i, nm in enumerate(names)}
        return np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), (len(x),)).copy()

    return fn


def field_function(e, n: int):
    """Callable f(x, u) for expressions in x1..xn and u."""
    names = [f"x{i + 1}" for i in range(n)]

    def fn(x, u):
        x = np.asarray(x, dtype=float)
        env = {nm: x[:, i] for i, nm in enumerate(names)}
        env["u"] = np.asarray(u, dtype=float)
        return np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), (len(x),)).copy()

    return fn
