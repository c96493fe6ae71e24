"""Tiny expression language for time-varying model coefficients.

Expressions are built from the time variable ``t``, indexed parameters
``theta[k]`` (1-based), numeric literals, the operators ``+ - * / ^`` and the
functions ``sin``, ``cos``, ``exp``.  Parsed trees evaluate vectorized over
numpy arrays of time points and carry exact forward-mode derivatives with
respect to every parameter.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExprNode",
    "ExprError",
    "ExprSyntaxError",
    "ExprEvalError",
    "parse_expr",
]


class ExprError(ValueError):
    """Base class for expression parsing/evaluation failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprEvalError(ExprError):
    """Raised when an expression evaluates to a non-finite value."""


_FUNCTIONS = ("sin", "cos", "exp")


@dataclass(frozen=True)
class ExprNode:
    """Immutable AST node.

    ``kind`` is one of ``const``, ``t``, ``theta``, ``neg``, ``add``, ``sub``,
    ``mul``, ``div``, ``pow``, ``sin``, ``cos``, ``exp``.  ``value`` holds the
    literal for ``const`` and the 1-based index for ``theta``.
    """

    kind: str
    value: float = 0.0
    left: Union["ExprNode", None] = None
    right: Union["ExprNode", None] = None

    def max_param_index(self) -> int:
        idx = int(self.value) if self.kind == "theta" else 0
        for child in (self.left, self.right):
            if child is not None:
                idx = max(idx, child.max_param_index())
        return idx

    def depends_on_t(self) -> bool:
        if self.kind == "t":
            return True
        return any(c.depends_on_t() for c in (self.left, self.right) if c is not None)

    def depends_on_theta(self) -> bool:
        if self.kind == "theta":
            return True
        return any(c.depends_on_theta() for c in (self.left, self.right) if c is not None)

    def is_constant_zero(self) -> bool:
        return self.kind == "const" and self.value == 0.0

    # -- evaluation ---------------------------------------------------------

    def eval(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Evaluate over an array of times; result broadcasts to ``t.shape``."""
        val = self._eval(np.asarray(t, dtype=float), np.asarray(theta, dtype=float))
        return np.broadcast_to(val, np.shape(t)).astype(float, copy=True) if np.ndim(val) == 0 else val

    def eval_with_grad(self, t: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(value, grad)`` with ``grad[k]`` the derivative in ``theta[k+1]``.

        Shapes are ``t.shape`` and ``(p,) + t.shape``.
        """
        t = np.asarray(t, dtype=float)
        theta = np.asarray(theta, dtype=float)
        val, grad = self._eval_grad(t, theta)
        val = np.broadcast_to(val, t.shape).astype(float, copy=True)
        grad = np.broadcast_to(grad, (theta.size,) + t.shape).astype(float, copy=True)
        return val, grad

    def _eval(self, t, theta):
        kind = self.kind
        if kind == "const":
            return self.value
        if kind == "t":
            return t
        if kind == "theta":
            return theta[int(self.value) - 1]
        if kind == "neg":
            return -self.left._eval(t, theta)
        if kind in ("sin", "cos", "exp"):
            return getattr(np, kind)(self.left._eval(t, theta))
        a = self.left._eval(t, theta)
        b = self.right._eval(t, theta)
        if kind == "add":
            return a + b
        if kind == "sub":
            return a - b
        if kind == "mul":
            return a * b
        if kind == "div":
            with np.errstate(divide="ignore", invalid="ignore"):
                return a / b
        if kind == "pow":
            return _safe_pow(a, b)
        raise AssertionError(f"unknown node kind {kind!r}")

    def _eval_grad(self, t, theta):
        p = theta.size
        kind = self.kind
        zeros = np.zeros((p,) + (1,) * t.ndim) if t.ndim else np.zeros((p,))
        if kind == "const":
            return self.value, zeros
        if kind == "t":
            return t, zeros
        if kind == "theta":
            g = zeros.copy()
            g[int(self.value) - 1] = 1.0
            return theta[int(self.value) - 1], g
        if kind == "neg":
            v, g = self.left._eval_grad(t, theta)
            return -v, -g
        if kind == "sin":
            v, g = self.left._eval_grad(t, theta)
            return np.sin(v), np.cos(v) * g
        if kind == "cos":
            v, g = self.left._eval_grad(t, theta)
            return np.cos(v), -np.sin(v) * g
        if kind == "exp":
            v, g = self.left._eval_grad(t, theta)
            ev = np.exp(v)
            return ev, ev * g
        va, ga = self.left._eval_grad(t, theta)
        vb, gb = self.right._eval_grad(t, theta)
        if kind == "add":
            return va + vb, ga + gb
        if kind == "sub":
            return va - vb, ga - gb
        if kind == "mul":
            return va * vb, ga * vb + va * gb
        if kind == "div":
            with np.errstate(divide="ignore", invalid="ignore"):
                return va / vb, (ga * vb - va * gb) / (vb * vb)
        if kind == "pow":
            # exponent is restricted to a theta/t-free subtree, so gb == 0
            c = float(np.asarray(vb).flat[0])
            v = _safe_pow(va, c)
            with np.errstate(divide="ignore", invalid="ignore"):
                dv = c * _safe_pow(va, c - 1.0) * ga
            return v, dv
        raise AssertionError(f"unknown node kind {kind!r}")


def _safe_pow(base, exponent):
    # integer exponents work for any sign of base; fractional ones need a
    # positive base (negative bases would silently produce NaN)
    exponent = np.asarray(exponent, dtype=float)
    if exponent.ndim > 0 and exponent.size > 1 and np.ptp(exponent) != 0:
        raise ExprEvalError("power exponent must be a constant")
    c = float(exponent.flat[0])
    if c == int(c):
        return np.asarray(base, dtype=float) ** int(c)
    if np.any(np.asarray(base) <= 0):
        raise ExprEvalError(
            f"power with non-integer exponent {c} requires a positive base"
        )
    return np.asarray(base, dtype=float) ** c


# -- parser ----------------------------------------------------------------
#
# Grammar (standard precedence, ^ binds tighter than unary minus and is
# right-associative):
#   expr    := term (('+'|'-') term)*
#   term    := unary (('*'|'/') unary)*
#   unary   := '-' unary | power
#   power   := atom ('^' unary)?
#   atom    := NUMBER | 't' | 'theta' '[' INT ']' | FUNC '(' expr ')' | '(' expr ')'


class _Parser:
    def __init__(self, text: str, n_params: int | None):
        self.text = text
        self.pos = 0
        self.n_params = n_params

    def parse(self) -> ExprNode:
        node = self._expr()
        self._skip_ws()
        if self.pos != len(self.text):
            raise ExprSyntaxError(
                f"unexpected character {self.text[self.pos]!r}", self.pos
            )
        return node

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expr(self) -> ExprNode:
        node = self._term()
        while True:
            ch = self._peek()
            if ch == "+":
                self.pos += 1
                node = ExprNode("add", left=node, right=self._term())
            elif ch == "-":
                self.pos += 1
                node = ExprNode("sub", left=node, right=self._term())
            else:
                return node

    def _term(self) -> ExprNode:
        node = self._unary()
        while True:
            ch = self._peek()
            if ch == "*":
                self.pos += 1
                node = ExprNode("mul", left=node, right=self._unary())
            elif ch == "/":
                self.pos += 1
                node = ExprNode("div", left=node, right=self._unary())
            else:
                return node

    def _unary(self) -> ExprNode:
        if self._peek() == "-":
            self.pos += 1
            return ExprNode("neg", left=self._unary())
        return self._power()

    def _power(self) -> ExprNode:
        node = self._atom()
        if self._peek() == "^":
            caret = self.pos
            self.pos += 1
            exponent = self._unary()
            if exponent.depends_on_t() or exponent.depends_on_theta():
                raise ExprSyntaxError(
                    "power exponent must be a constant expression", caret
                )
            return ExprNode("pow", left=node, right=exponent)
        return node

    def _atom(self) -> ExprNode:
        self._skip_ws()
        if self.pos >= len(self.text):
            raise ExprSyntaxError("unexpected end of expression", self.pos)
        ch = self.text[self.pos]
        if ch == "(":
            self.pos += 1
            node = self._expr()
            if self._peek() != ")":
                raise ExprSyntaxError("expected ')'", self.pos)
            self.pos += 1
            return node
        if ch.isdigit() or ch == ".":
            return self._number()
        if ch.isalpha() or ch == "_":
            return self._identifier()
        raise ExprSyntaxError(f"unexpected character {ch!r}", self.pos)

    def _number(self) -> ExprNode:
        start = self.pos
        text = self.text
        while self.pos < len(text) and (text[self.pos].isdigit() or text[self.pos] == "."):
            self.pos += 1
        if self.pos < len(text) and text[self.pos] in "eE":
            probe = self.pos + 1
            if probe < len(text) and text[probe] in "+-":
                probe += 1
            if probe < len(text) and text[probe].isdigit():
                self.pos = probe
                while self.pos < len(text) and text[self.pos].isdigit():
                    self.pos += 1
        try:
            value = float(text[start : self.pos])
        except ValueError:
            raise ExprSyntaxError("malformed number", start) from None
        return ExprNode("const", value=value)

    def _identifier(self) -> ExprNode:
        start = self.pos
        text = self.text
        while self.pos < len(text) and (text[self.pos].isalnum() or text[self.pos] == "_"):
            self.pos += 1
        name = text[start : self.pos]
        if name == "t":
            return ExprNode("t")
        if name == "theta":
            if self._peek() != "[":
                raise ExprSyntaxError("expected '[' after 'theta'", self.pos)
            self.pos += 1
            self._skip_ws()
            idx_start = self.pos
            while self.pos < len(text) and text[self.pos].isdigit():
                self.pos += 1
            if self.pos == idx_start:
                raise ExprSyntaxError("expected parameter index", idx_start)
            index = int(text[idx_start : self.pos])
            if self._peek() != "]":
                raise ExprSyntaxError("expected ']'", self.pos)
            self.pos += 1
            if index < 1:
                raise ExprSyntaxError("parameter indices start at 1", idx_start)
            if self.n_params is not None and index > self.n_params:
                raise ExprSyntaxError(
                    f"parameter index {index} out of range (p={self.n_params})",
                    idx_start,
                )
            return ExprNode("theta", value=float(index))
        if name in _FUNCTIONS:
            if self._peek() != "(":
                raise ExprSyntaxError(f"expected '(' after '{name}'", self.pos)
            self.pos += 1
            arg = self._expr()
            if self._peek() != ")":
                raise ExprSyntaxError("expected ')'", self.pos)
            self.pos += 1
            return ExprNode(name, left=arg)
        raise ExprSyntaxError(f"unknown identifier {name!r}", start)


def parse_expr(text: str, n_params: int | None = None) -> ExprNode:
    """Parse ``text`` into an :class:`ExprNode`.

    ``n_params`` bounds the admissible ``theta`` indices; pass ``None`` to
    accept any positive index (the containing model validates later).
    """
    if not text.isascii():
        raise ExprSyntaxError("expression must be ASCII", 0)
    return _Parser(text, n_params).parse()
