"""Scalar expressions over R^n: parsing, evaluation, symbolic derivatives.

Expressions follow the grammar

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' exponent)?        # exponent is a base
    base   := number | variable | func '(' expr ')' | '(' expr ')' | '-' base

with functions sin, cos, exp, ln, sqrt, abs, tanh (plus sign, which shows
up in derivatives of abs).  Note that per this grammar unary minus binds
tighter than '^': "-x^2" is (-x)^2.  Write "-(x^2)" for the other reading.

Variables are x, y, z for dimensions up to 3 (x1..xn aliases accepted),
x1..xn above that.  A custom name table may be supplied, e.g. (y, z) for
one-degree-of-freedom Hamiltonians.

ASTs are immutable after construction and evaluation is pure, so a single
expression can be evaluated concurrently from many threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    ExprSyntaxError,
    NonFiniteError,
    UnknownVariableError,
)

__all__ = [
    "ScalarExpr",
    "VectorFieldDef",
    "parse_expression",
    "evaluate",
    "evaluate_unchecked",
    "differentiate",
    "gradient",
    "make_gradient_system",
    "make_hamiltonian_system",
    "default_variable_names",
]

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "abs", "tanh", "sign")

_NP_NAME = {
    "sin": "sin",
    "cos": "cos",
    "exp": "exp",
    "ln": "log",
    "sqrt": "sqrt",
    "abs": "abs",
    "tanh": "tanh",
    "sign": "sign",
}


# --- AST -----------------------------------------------------------------

class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    index: int


@dataclass(frozen=True)
class Add(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Sub(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Mul(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Div(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: Node


@dataclass(frozen=True)
class Neg(Node):
    a: Node


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node


def default_variable_names(dimension: int) -> tuple:
    if dimension <= 3:
        return ("x", "y", "z")[:dimension]
    return tuple(f"x{i + 1}" for i in range(dimension))


class ScalarExpr:
    """An immutable scalar expression of a fixed dimension."""

    def __init__(self, root: Node, dimension: int, names: Optional[Sequence[str]] = None):
        if dimension < 1:
            raise DimensionMismatchError("dimension must be >= 1")
        if names is None:
            names = default_variable_names(dimension)
        if len(names) != dimension:
            raise DimensionMismatchError(
                f"{len(names)} variable names for dimension {dimension}"
            )
        self.root = root
        self.dimension = dimension
        self.names = tuple(names)
        self._fn = None

    # -- printing ---------------------------------------------------------

    def __str__(self) -> str:
        return _to_source(self.root, self.names, _L_EXPR)

    def __repr__(self) -> str:
        return f"ScalarExpr({str(self)!r}, n={self.dimension})"

    # -- evaluation ---------------------------------------------------------

    @property
    def compiled(self):
        """Vectorised evaluator: maps an (..., n) array to an (...) array."""
        if self._fn is None:
            self._fn = _compile(self.root)
        return self._fn

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim < 1 or pts.shape[-1] != self.dimension:
            raise DimensionMismatchError(
                f"points of dimension {pts.shape[-1] if pts.ndim else 0}, "
                f"expression has dimension {self.dimension}"
            )
        with np.errstate(all="ignore"):
            out = self.compiled(pts)
        out = np.asarray(out, dtype=np.float64)
        if out.shape != pts.shape[:-1]:
            out = np.broadcast_to(out, pts.shape[:-1]).copy()
        return out

    @property
    def nonsmooth(self) -> bool:
        """True if the expression contains abs or sign nodes."""
        return len(nonsmooth_args(self)) > 0


def nonsmooth_args(expr: ScalarExpr) -> list:
    """Arguments of abs/sign nodes, as ScalarExprs.

    These are the loci where the expression may fail to be C^1: smoothness
    holds wherever every returned expression is bounded away from zero.
    """
    found = []

    def walk(node):
        if isinstance(node, Call):
            if node.fn in ("abs", "sign"):
                found.append(ScalarExpr(node.arg, expr.dimension, expr.names))
            walk(node.arg)
        elif isinstance(node, (Add, Sub, Mul, Div)):
            walk(node.a)
            walk(node.b)
        elif isinstance(node, Pow):
            walk(node.base)
            walk(node.exponent)
        elif isinstance(node, Neg):
            walk(node.a)

    walk(expr.root)
    return found


# --- tokenizer / parser --------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", at + 1)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num") + 1))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name") + 1))
        else:
            tokens.append(("op", m.group("op"), m.start("op") + 1))
        pos = m.end()
    tokens.append(("end", "", len(source) + 1))
    return tokens


class _Parser:
    def __init__(self, tokens, name_map, declared):
        self.tokens = tokens
        self.i = 0
        self.name_map = name_map
        self.declared = declared

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"got {text!r}" if text else "unexpected end", pos,
                                  expected=repr(op))
        return self.take()

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                rhs = self.term()
                node = Add(node, rhs) if text == "+" else Sub(node, rhs)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                rhs = self.factor()
                node = Mul(node, rhs) if text == "*" else Div(node, rhs)
            else:
                return node

    def factor(self):
        node = self.base()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            exponent = self.base()
            node = Pow(node, exponent)
        return node

    def base(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(":
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(
                        f"unknown function '{text}'", pos,
                        expected="one of " + ", ".join(FUNCTIONS))
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            if text not in self.name_map:
                raise UnknownVariableError(text, pos, self.declared)
            return Var(self.name_map[text])
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "op" and text == "-":
            return Neg(self.base())
        raise ExprSyntaxError(
            f"got {text!r}" if text else "unexpected end", pos,
            expected="number, variable, function or '('")


def parse_expression(source: str, dimension: int,
                     names: Optional[Sequence[str]] = None) -> ScalarExpr:
    """Parse ``source`` into a ScalarExpr of the given dimension.

    Unknown identifiers, arity problems and syntax errors raise with the
    1-based source position.
    """
    if dimension < 1:
        raise DimensionMismatchError("dimension must be >= 1")
    if names is None:
        names = default_variable_names(dimension)
    names = tuple(names)
    if len(names) != dimension:
        raise DimensionMismatchError(
            f"{len(names)} variable names for dimension {dimension}")
    name_map = {name: i for i, name in enumerate(names)}
    if names == default_variable_names(dimension) and dimension <= 3:
        for i in range(dimension):
            name_map.setdefault(f"x{i + 1}", i)
    tokens = _tokenize(source)
    root = _Parser(tokens, name_map, names).parse()
    return ScalarExpr(root, dimension, names)


# --- printing ------------------------------------------------------------

_L_EXPR, _L_TERM, _L_FACTOR, _L_BASE = 0, 1, 2, 3


def _level(node: Node) -> int:
    if isinstance(node, (Add, Sub)):
        return _L_EXPR
    if isinstance(node, (Mul, Div)):
        return _L_TERM
    if isinstance(node, Pow):
        return _L_FACTOR
    return _L_BASE


def _is_negish(node: Node) -> bool:
    return isinstance(node, Neg) or (isinstance(node, Const) and node.value < 0)


def _to_source(node: Node, names, min_level: int) -> str:
    if isinstance(node, Const):
        v = float(node.value)
        text = repr(abs(v))
        s = "-" + text if v < 0 else text
    elif isinstance(node, Var):
        s = names[node.index]
    elif isinstance(node, Add):
        s = f"{_to_source(node.a, names, _L_EXPR)} + {_to_source(node.b, names, _L_TERM)}"
    elif isinstance(node, Sub):
        s = f"{_to_source(node.a, names, _L_EXPR)} - {_to_source(node.b, names, _L_TERM)}"
    elif isinstance(node, Mul):
        s = f"{_to_source(node.a, names, _L_TERM)}*{_to_source(node.b, names, _L_FACTOR)}"
    elif isinstance(node, Div):
        s = f"{_to_source(node.a, names, _L_TERM)}/{_to_source(node.b, names, _L_FACTOR)}"
    elif isinstance(node, Pow):
        base = _to_source(node.base, names, _L_BASE)
        if _is_negish(node.base):
            base = f"({base})"
        s = f"{base}^{_to_source(node.exponent, names, _L_BASE)}"
    elif isinstance(node, Neg):
        s = "-" + _to_source(node.a, names, _L_BASE)
    elif isinstance(node, Call):
        s = f"{node.fn}({_to_source(node.arg, names, _L_EXPR)})"
    else:  # pragma: no cover
        raise TypeError(f"unknown node {node!r}")
    if _level(node) < min_level:
        return f"({s})"
    return s


# --- compilation and evaluation -------------------------------------------

def _emit(node: Node) -> str:
    if isinstance(node, Const):
        return f"np.float64({node.value!r})"
    if isinstance(node, Var):
        return f"X[..., {node.index}]"
    if isinstance(node, Add):
        return f"({_emit(node.a)} + {_emit(node.b)})"
    if isinstance(node, Sub):
        return f"({_emit(node.a)} - {_emit(node.b)})"
    if isinstance(node, Mul):
        return f"({_emit(node.a)} * {_emit(node.b)})"
    if isinstance(node, Div):
        return f"({_emit(node.a)} / {_emit(node.b)})"
    if isinstance(node, Pow):
        return f"np.power({_emit(node.base)}, {_emit(node.exponent)})"
    if isinstance(node, Neg):
        return f"(-{_emit(node.a)})"
    if isinstance(node, Call):
        return f"np.{_NP_NAME[node.fn]}({_emit(node.arg)})"
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


def _compile(root: Node):
    source = f"def _compiled(X):\n    return {_emit(root)}\n"
    namespace = {"np": np}
    exec(compile(source, "<lyapcert-expr>", "exec"), namespace)
    return namespace["_compiled"]


def _walk_locate_nonfinite(node: Node, coords, names, point):
    """Post-order evaluation that raises at the innermost non-finite node."""
    if isinstance(node, Const):
        return np.float64(node.value)
    if isinstance(node, Var):
        return coords[node.index]
    with np.errstate(all="ignore"):
        if isinstance(node, (Add, Sub, Mul, Div)):
            a = _walk_locate_nonfinite(node.a, coords, names, point)
            b = _walk_locate_nonfinite(node.b, coords, names, point)
            if isinstance(node, Add):
                v = a + b
            elif isinstance(node, Sub):
                v = a - b
            elif isinstance(node, Mul):
                v = a * b
            else:
                v = a / b
        elif isinstance(node, Pow):
            a = _walk_locate_nonfinite(node.base, coords, names, point)
            b = _walk_locate_nonfinite(node.exponent, coords, names, point)
            v = np.power(a, b)
        elif isinstance(node, Neg):
            v = -_walk_locate_nonfinite(node.a, coords, names, point)
        elif isinstance(node, Call):
            a = _walk_locate_nonfinite(node.arg, coords, names, point)
            v = getattr(np, _NP_NAME[node.fn])(a)
        else:  # pragma: no cover
            raise TypeError(f"unknown node {node!r}")
    if not np.isfinite(v):
        raise NonFiniteError(_to_source(node, names, _L_EXPR), point)
    return v


def evaluate(expr: ScalarExpr, point) -> float:
    """Evaluate at a point; non-finite results raise with the offending
    subexpression and the point."""
    coords = np.asarray(point, dtype=np.float64)
    if coords.shape != (expr.dimension,):
        raise DimensionMismatchError(
            f"point of shape {coords.shape}, expression has dimension {expr.dimension}")
    value = expr.eval_many(coords[None, :])[0]
    if not np.isfinite(value):
        _walk_locate_nonfinite(expr.root, coords, expr.names, coords)
        raise NonFiniteError(str(expr), coords)  # pragma: no cover
    return float(value)


def evaluate_unchecked(expr: ScalarExpr, point) -> float:
    """Evaluate at a point, letting nan/inf through (for diagnostics)."""
    coords = np.asarray(point, dtype=np.float64)
    return float(expr.eval_many(coords[None, :])[0])


# --- derivative construction ----------------------------------------------

def _fold2(op, a: Node, b: Node):
    if isinstance(a, Const) and isinstance(b, Const):
        with np.errstate(all="ignore"):
            v = op(np.float64(a.value), np.float64(b.value))
        if np.isfinite(v):
            return Const(float(v))
    return None


def _is_zero(n: Node) -> bool:
    return isinstance(n, Const) and n.value == 0.0


def _is_one(n: Node) -> bool:
    return isinstance(n, Const) and n.value == 1.0


def c_add(a: Node, b: Node) -> Node:
    folded = _fold2(lambda x, y: x + y, a, b)
    if folded is not None:
        return folded
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Add(a, b)


def c_sub(a: Node, b: Node) -> Node:
    folded = _fold2(lambda x, y: x - y, a, b)
    if folded is not None:
        return folded
    if _is_zero(b):
        return a
    if _is_zero(a):
        return c_neg(b)
    return Sub(a, b)


def c_mul(a: Node, b: Node) -> Node:
    folded = _fold2(lambda x, y: x * y, a, b)
    if folded is not None:
        return folded
    if _is_zero(a) or _is_zero(b):
        return Const(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return Mul(a, b)


def c_div(a: Node, b: Node) -> Node:
    folded = _fold2(lambda x, y: x / y, a, b)
    if folded is not None:
        return folded
    if _is_zero(a):
        return Const(0.0)
    if _is_one(b):
        return a
    return Div(a, b)


def c_neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def c_pow(base: Node, exponent: Node) -> Node:
    folded = _fold2(np.power, base, exponent)
    if folded is not None:
        return folded
    if _is_one(exponent):
        return base
    if _is_zero(exponent):
        return Const(1.0)
    return Pow(base, exponent)


def _diff(node: Node, i: int) -> Node:
    if isinstance(node, Const):
        return Const(0.0)
    if isinstance(node, Var):
        return Const(1.0) if node.index == i else Const(0.0)
    if isinstance(node, Add):
        return c_add(_diff(node.a, i), _diff(node.b, i))
    if isinstance(node, Sub):
        return c_sub(_diff(node.a, i), _diff(node.b, i))
    if isinstance(node, Mul):
        return c_add(c_mul(_diff(node.a, i), node.b),
                     c_mul(node.a, _diff(node.b, i)))
    if isinstance(node, Div):
        return c_sub(c_div(_diff(node.a, i), node.b),
                     c_div(c_mul(node.a, _diff(node.b, i)),
                           c_pow(node.b, Const(2.0))))
    if isinstance(node, Neg):
        return c_neg(_diff(node.a, i))
    if isinstance(node, Pow):
        du = _diff(node.base, i)
        dv = _diff(node.exponent, i)
        if isinstance(node.exponent, Const):
            c = node.exponent.value
            return c_mul(c_mul(Const(c), c_pow(node.base, Const(c - 1.0))), du)
        if _is_zero(du):
            # a^v with constant-in-x_i base: a^v * ln(a) * dv
            return c_mul(c_mul(node, Call("ln", node.base)), dv)
        return c_mul(node, c_add(c_mul(dv, Call("ln", node.base)),
                                 c_div(c_mul(node.exponent, du), node.base)))
    if isinstance(node, Call):
        du = _diff(node.arg, i)
        u = node.arg
        if node.fn == "sin":
            outer = Call("cos", u)
        elif node.fn == "cos":
            outer = c_neg(Call("sin", u))
        elif node.fn == "exp":
            outer = Call("exp", u)
        elif node.fn == "ln":
            return c_div(du, u)
        elif node.fn == "sqrt":
            return c_div(du, c_mul(Const(2.0), Call("sqrt", u)))
        elif node.fn == "abs":
            # non-smooth at u = 0; left symbolic via sign
            outer = Call("sign", u)
        elif node.fn == "tanh":
            outer = c_sub(Const(1.0), c_pow(Call("tanh", u), Const(2.0)))
        elif node.fn == "sign":
            # zero a.e.; the jump at u = 0 is flagged, not represented
            return Const(0.0)
        else:  # pragma: no cover
            raise TypeError(f"unknown function {node.fn}")
        return c_mul(outer, du)
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


def differentiate(expr: ScalarExpr, var_index: int) -> ScalarExpr:
    """Exact symbolic partial derivative with respect to variable var_index.

    Derivatives of abs are expressed through sign and leave the result
    flagged non-smooth (``result.nonsmooth``); certification refuses
    surfaces passing through points where such arguments vanish.
    """
    if not 0 <= var_index < expr.dimension:
        raise DimensionMismatchError(
            f"variable index {var_index} out of range for dimension {expr.dimension}")
    return ScalarExpr(_diff(expr.root, var_index), expr.dimension, expr.names)


# --- vector fields ---------------------------------------------------------

class VectorFieldDef:
    """Right-hand side of dx/dt = f(x): one scalar component per axis."""

    def __init__(self, components: Sequence[ScalarExpr]):
        components = tuple(components)
        if not components:
            raise DimensionMismatchError("vector field needs at least one component")
        n = components[0].dimension
        if len(components) != n:
            raise DimensionMismatchError(
                f"{len(components)} components for dimension {n}")
        for c in components:
            if c.dimension != n:
                raise DimensionMismatchError("component dimensions disagree")
        self.dimension = n
        self.components = components

    def __repr__(self) -> str:
        return f"VectorFieldDef(({', '.join(str(c) for c in self.components)}))"

    def sources(self) -> list:
        return [str(c) for c in self.components]

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        cols = [c.eval_many(pts) for c in self.components]
        return np.stack(cols, axis=-1)

    def eval_at(self, point) -> np.ndarray:
        coords = np.asarray(point, dtype=np.float64)
        return self.eval_many(coords[None, :])[0]


def gradient(F: ScalarExpr) -> VectorFieldDef:
    """grad F as a vector field: i-th component is dF/dx_i."""
    return VectorFieldDef([differentiate(F, i) for i in range(F.dimension)])


def make_gradient_system(F: ScalarExpr, negate_F: bool = False) -> VectorFieldDef:
    """dx/dt = -grad F (or -grad(-F) = +grad F with negate_F)."""
    if F.dimension < 2:
        raise DimensionMismatchError(
            "gradient systems need dimension >= 2 (closed hypersurfaces)")
    comps = []
    for i in range(F.dimension):
        d = differentiate(F, i)
        root = d.root if negate_F else c_neg(d.root)
        comps.append(ScalarExpr(root, F.dimension, F.names))
    return VectorFieldDef(comps)


def make_hamiltonian_system(F: ScalarExpr, dof: int) -> VectorFieldDef:
    """Canonical system for F(y, z): dy/dt = dF/dz, dz/dt = -dF/dy.

    The first ``dof`` variables are the positions y, the last ``dof`` the
    momenta z; F must have dimension 2*dof.
    """
    if dof < 1:
        raise DimensionMismatchError("dof must be >= 1")
    if F.dimension % 2 != 0:
        raise DimensionMismatchError(
            f"odd dimension {F.dimension}: a Hamiltonian needs pairs (y_i, z_i)")
    if F.dimension != 2 * dof:
        raise DimensionMismatchError(
            f"dimension {F.dimension} does not match 2*dof = {2 * dof}")
    comps = []
    for i in range(dof):
        comps.append(differentiate(F, dof + i))
    for i in range(dof):
        d = differentiate(F, i)
        comps.append(ScalarExpr(c_neg(d.root), F.dimension, F.names))
    return VectorFieldDef(comps)
