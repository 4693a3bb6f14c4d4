"""A small arithmetic expression language for potentials in config files.

Grammar (Python syntax subset)::

    expr   := expr ('+' | '-' | '*' | '/' | '**' | '^') expr
            | '-' expr | '+' expr | '(' expr ')'
            | NUMBER | NAME | FUNC '(' expr ')'
    FUNC   := exp | sech | tanh | cosh | sinh | sin | cos | sqrt | abs | log
    NAME   := x1 .. xn | x | y | z | t | s | r | pi | e

``x``, ``y`` and ``z`` alias ``x1``, ``x2`` and ``x3``.  Anything else (calls
with several arguments, attribute access, comparisons, ...) is rejected.
"""

from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

from .errors import ValidationError

_FUNCS: dict[str, Callable] = {
    "exp": np.exp,
    "sech": lambda a: 1.0 / np.cosh(a),
    "tanh": np.tanh,
    "cosh": np.cosh,
    "sinh": np.sinh,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "log": np.log,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALIASES = {"x": "x1", "y": "x2", "z": "x3"}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """Compiled expression; call with keyword arrays, e.g. ``f(x1=..., x2=...)``."""

    def __init__(self, source: str, field: str | None = None):
        self.source = source
        self._field = field
        text = source.replace("^", "**")
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ValidationError(f"cannot parse expression {source!r}: {exc.msg}",
                                  field=field) from None
        self.names: set[str] = set()
        self._fn = self._compile(tree.body)

    def _fail(self, what: str):
        raise ValidationError(f"{what} not allowed in expression {self.source!r}",
                              field=self._field)

    def _compile(self, node) -> Callable[[dict], np.ndarray]:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                self._fail("literal")
            val = float(node.value)
            return lambda env: val
        if isinstance(node, ast.Name):
            name = _ALIASES.get(node.id, node.id)
            if name in _CONSTS:
                val = _CONSTS[name]
                return lambda env: val
            if name in _FUNCS:
                self._fail(f"bare function name {node.id!r}")
            self.names.add(name)
            return lambda env: env[name]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = self._compile(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda env: -inner(env)
            return inner
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = self._compile(node.left), self._compile(node.right)
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                self._fail("function call")
            if len(node.args) != 1 or node.keywords:
                self._fail("multi-argument call")
            fn = _FUNCS[node.func.id]
            arg = self._compile(node.args[0])
            return lambda env: fn(arg(env))
        self._fail(type(node).__name__)

    def __call__(self, **env) -> np.ndarray:
        missing = self.names - env.keys()
        if missing:
            raise ValidationError(f"expression {self.source!r} needs {sorted(missing)}",
                                  field=self._field)
        with np.errstate(all="ignore"):
            return self._fn(env)

    def __repr__(self):
        return f"Expression({self.source!r})"


def spatial(source: str, dim: int, field: str | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an expression in ``x1..x_dim`` to ``f(points[..., dim]) -> values``."""
    expr = Expression(source, field)
    bad = {n for n in expr.names if not (n.startswith("x") and n[1:].isdigit()
                                         and 1 <= int(n[1:]) <= dim)}
    if bad:
        raise ValidationError(f"unknown variables {sorted(bad)} for dimension {dim}",
                              field=field)

    def fn(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        env = {f"x{i + 1}": pts[..., i] for i in range(dim)}
        out = expr(**env)
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()

    fn.source = source
    return fn
