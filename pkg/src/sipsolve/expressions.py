"""Arithmetic expressions over x/y variables with exact derivatives.

The grammar covers the usual scalar arithmetic (+, -, *, /, ^, unary minus),
the functions sin, cos, exp, log, sqrt, numeric literals, and variables named
``x1..xn`` / ``y1..ym``.  ``^`` only accepts constant integer exponents >= 0
or the literal 0.5; ``abs`` is deliberately not part of the grammar (it would
break the smoothness assumptions of the solvers downstream).

Derivatives come from forward-mode automatic differentiation carrying value,
gradient, and Hessian together, so compiled fields are exact to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")
_BIN_OPS = ("+", "-", "*", "/", "^")


class SpecParseError(ValueError):
    """Syntax or semantic error in an expression, with source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class DomainError(ArithmeticError):
    """An expression was evaluated outside its differentiable domain."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str   # 'x' or 'y'
    index: int  # 1-based, as written in the source


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expression"


Expression = Union[Num, Var, Neg, Bin, Call]


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str   # NUM, IDENT, OP, LPAREN, RPAREN, EOF
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    tokens = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        if ch.isdigit() or (ch == "." and i + 1 < len(text) and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < len(text) and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < len(text) and text[j] in "eE":
                k = j + 1
                if k < len(text) and text[k] in "+-":
                    k += 1
                if k < len(text) and text[k].isdigit():
                    j = k
                    while j < len(text) and text[j].isdigit():
                        j += 1
            tokens.append(_Token("NUM", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch in _BIN_OPS:
            tokens.append(_Token("OP", ch, line, start_col))
        elif ch == "(":
            tokens.append(_Token("LPAREN", ch, line, start_col))
        elif ch == ")":
            tokens.append(_Token("RPAREN", ch, line, start_col))
        else:
            raise SpecParseError(f"unexpected character {ch!r}", line, start_col)
        i += 1
        col += 1
    tokens.append(_Token("EOF", "", line, col))
    return tokens


class _Parser:
    """Recursive descent over the token stream."""

    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise SpecParseError(message, tok.line, tok.col)

    def parse(self) -> Expression:
        expr = self.parse_sum()
        tok = self.peek()
        if tok.kind != "EOF":
            self.error(f"unexpected {tok.text!r}")
        return expr

    def parse_sum(self) -> Expression:
        node = self.parse_term()
        while self.peek().kind == "OP" and self.peek().text in "+-":
            op = self.advance().text
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expression:
        node = self.parse_unary()
        while self.peek().kind == "OP" and self.peek().text in "*/":
            op = self.advance().text
            node = Bin(op, node, self.parse_unary())
        return node

    def parse_unary(self) -> Expression:
        if self.peek().kind == "OP" and self.peek().text == "-":
            self.advance()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expression:
        base = self.parse_primary()
        if self.peek().kind == "OP" and self.peek().text == "^":
            op_tok = self.advance()
            exponent = self.parse_unary()
            if not isinstance(exponent, Num):
                self.error("exponent must be a numeric constant", op_tok)
            val = exponent.value
            if val != 0.5 and not (float(val).is_integer() and val >= 0):
                self.error("exponent must be a nonnegative integer or 0.5", op_tok)
            return Bin("^", base, exponent)
        return base

    def parse_primary(self) -> Expression:
        tok = self.peek()
        if tok.kind == "NUM":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "IDENT":
            self.advance()
            name = tok.text
            if name in FUNCTIONS:
                open_tok = self.peek()
                if open_tok.kind != "LPAREN":
                    self.error(f"expected '(' after {name}", open_tok)
                self.advance()
                arg = self.parse_sum()
                if self.peek().kind != "RPAREN":
                    # point at the unmatched opening parenthesis
                    self.error("unclosed '('", open_tok)
                self.advance()
                return Call(name, arg)
            if name[0] in "xy" and name[1:].isdigit():
                index = int(name[1:])
                if index < 1:
                    self.error(f"variable index must start at 1: {name!r}", tok)
                return Var(name[0], index)
            self.error(f"unknown identifier {name!r} (abs is not supported)", tok)
        if tok.kind == "LPAREN":
            open_tok = self.advance()
            node = self.parse_sum()
            if self.peek().kind != "RPAREN":
                self.error("unclosed '('", open_tok)
            self.advance()
            return node
        if tok.kind == "RPAREN":
            self.error("unmatched ')'", tok)
        if tok.kind == "EOF":
            # anchor at the token an operand was expected after, not at EOF
            prev = self.tokens[self.pos - 1] if self.pos else tok
            self.error("unexpected end of expression", prev)
        self.error(f"unexpected {tok.text!r}", tok)


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an AST; raises :class:`SpecParseError` on bad input."""
    return _Parser(_tokenize(text)).parse()


# ---------------------------------------------------------------------------
# Printing (round-trips through parse_expression to an identical AST)
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _print(node: Expression, parent_prec: int, right_side: bool) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Call):
        return f"{node.fn}({_print(node.arg, 0, False)})"
    if isinstance(node, Neg):
        inner = _print(node.arg, _PREC["neg"], False)
        text = f"-{inner}"
        if parent_prec > _PREC["neg"] or (right_side and parent_prec == _PREC["neg"]):
            return f"({text})"
        return text
    prec = _PREC[node.op]
    left = _print(node.left, prec, False)
    # -, / and ^ need parentheses around same-precedence right children
    right = _print(node.right, prec, node.op in "-/^")
    text = f"{left} {node.op} {right}" if node.op != "^" else f"{left}^{right}"
    if prec < parent_prec or (right_side and prec == parent_prec):
        return f"({text})"
    return text


def to_string(expr: Expression) -> str:
    return _print(expr, 0, False)


def variables(expr: Expression) -> set:
    """All (kind, index) pairs appearing in the expression."""
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Var):
        return {(expr.kind, expr.index)}
    if isinstance(expr, Neg):
        return variables(expr.arg)
    if isinstance(expr, Call):
        return variables(expr.arg)
    return variables(expr.left) | variables(expr.right)


# ---------------------------------------------------------------------------
# Evaluation: plain values (scalar or numpy-broadcast) and forward AD
# ---------------------------------------------------------------------------

def eval_value(expr: Expression, env):
    """Evaluate with ``env[(kind, index)]`` giving scalars or numpy arrays."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return env[(expr.kind, expr.index)]
    if isinstance(expr, Neg):
        return -eval_value(expr.arg, env)
    if isinstance(expr, Call):
        arg = eval_value(expr.arg, env)
        with np.errstate(divide="ignore", invalid="ignore"):
            return getattr(np, expr.fn)(arg)
    left = eval_value(expr.left, env)
    right = eval_value(expr.right, env)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if expr.op == "/":
        with np.errstate(divide="ignore", invalid="ignore"):
            return left / right
    with np.errstate(invalid="ignore"):
        return left ** right


class Taylor2:
    """Value together with gradient and Hessian w.r.t. d seed variables."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v: float, g, h):
        self.v = v
        self.g = g
        self.h = h

    @staticmethod
    def constant(value: float, d: int) -> "Taylor2":
        return Taylor2(float(value), np.zeros(d), np.zeros((d, d)))

    @staticmethod
    def seed(value: float, slot: int, d: int) -> "Taylor2":
        g = np.zeros(d)
        g[slot] = 1.0
        return Taylor2(float(value), g, np.zeros((d, d)))

    def __add__(self, other):
        return Taylor2(self.v + other.v, self.g + other.g, self.h + other.h)

    def __sub__(self, other):
        return Taylor2(self.v - other.v, self.g - other.g, self.h - other.h)

    def __neg__(self):
        return Taylor2(-self.v, -self.g, -self.h)

    def __mul__(self, other):
        cross = np.outer(self.g, other.g)
        return Taylor2(self.v * other.v,
                       self.v * other.g + other.v * self.g,
                       self.v * other.h + other.v * self.h + cross + cross.T)

    def __truediv__(self, other):
        if other.v == 0.0:
            raise DomainError("division by zero")
        q = self.v / other.v
        gq = (self.g - q * other.g) / other.v
        cross = np.outer(gq, other.g)
        hq = (self.h - q * other.h - cross - cross.T) / other.v
        return Taylor2(q, gq, hq)

    def chain(self, f0: float, f1: float, f2: float) -> "Taylor2":
        """Compose with a scalar map given f(v), f'(v), f''(v)."""
        return Taylor2(f0, f1 * self.g, f1 * self.h + f2 * np.outer(self.g, self.g))


def _taylor_pow(base: Taylor2, exponent: float) -> Taylor2:
    if exponent == 0.5:
        if base.v <= 0.0:
            raise DomainError("sqrt of a nonpositive value")
        r = np.sqrt(base.v)
        return base.chain(r, 0.5 / r, -0.25 / r ** 3)
    p = int(exponent)
    if p == 0:
        d = len(base.g)
        return Taylor2.constant(1.0, d)
    if p == 1:
        return Taylor2(base.v, base.g.copy(), base.h.copy())
    f1 = p * base.v ** (p - 1)
    f2 = p * (p - 1) * base.v ** (p - 2)
    return base.chain(base.v ** p, f1, f2)


def _taylor_call(fn: str, arg: Taylor2) -> Taylor2:
    v = arg.v
    if fn == "sin":
        return arg.chain(np.sin(v), np.cos(v), -np.sin(v))
    if fn == "cos":
        return arg.chain(np.cos(v), -np.sin(v), -np.cos(v))
    if fn == "exp":
        e = np.exp(v)
        return arg.chain(e, e, e)
    if fn == "log":
        if v <= 0.0:
            raise DomainError("log of a nonpositive value")
        return arg.chain(np.log(v), 1.0 / v, -1.0 / v ** 2)
    if fn == "sqrt":
        if v <= 0.0:
            raise DomainError("sqrt of a nonpositive value")
        r = np.sqrt(v)
        return arg.chain(r, 0.5 / r, -0.25 / r ** 3)
    raise ValueError(f"unknown function {fn!r}")


def eval_taylor2(expr: Expression, env: dict, d: int) -> Taylor2:
    """Forward AD sweep; ``env[(kind, index)]`` maps to (slot, value) pairs."""
    if isinstance(expr, Num):
        return Taylor2.constant(expr.value, d)
    if isinstance(expr, Var):
        slot, value = env[(expr.kind, expr.index)]
        return Taylor2.seed(value, slot, d)
    if isinstance(expr, Neg):
        return -eval_taylor2(expr.arg, env, d)
    if isinstance(expr, Call):
        return _taylor_call(expr.fn, eval_taylor2(expr.arg, env, d))
    if expr.op == "^":
        return _taylor_pow(eval_taylor2(expr.left, env, d), expr.right.value)
    left = eval_taylor2(expr.left, env, d)
    right = eval_taylor2(expr.right, env, d)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    return left / right
