"""Safe arithmetic expression compiler for coordinate functions.

Vector field coefficients, densities and conformal factors are written as
plain arithmetic expressions in the chart coordinates ("-y/2", "x**2 + 1",
"exp(-r)").  We compile them through the ast module with a whitelist, so
structure definition files cannot execute arbitrary code, and the resulting
callables broadcast over numpy arrays.
"""
from __future__ import annotations

import ast
import math

import numpy as np

_ALLOWED_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "atan": np.arctan,
    "atan2": np.arctan2,
    "cosh": np.cosh,
    "sinh": np.sinh,
    "tanh": np.tanh,
    "min": np.minimum,
    "max": np.maximum,
}

_ALLOWED_CONSTS = {"pi": math.pi, "e": math.e}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
    ast.Constant,
    ast.Name,
    ast.Call,
    ast.Load,
)


class ExpressionError(ValueError):
    """Raised when an expression fails to parse or uses forbidden syntax."""


def _validate(tree: ast.AST, names: set[str], source: str) -> None:
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(
                f"forbidden syntax {type(node).__name__!r} in expression {source!r}"
            )
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise ExpressionError(f"unknown function call in expression {source!r}")
            if node.keywords:
                raise ExpressionError(f"keyword arguments not allowed in {source!r}")
        if isinstance(node, ast.Name):
            if node.id not in names and node.id not in _ALLOWED_FUNCS and node.id not in _ALLOWED_CONSTS:
                raise ExpressionError(
                    f"unknown name {node.id!r} in expression {source!r}; "
                    f"coordinates are {sorted(names)}"
                )
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant in expression {source!r}")


class CompiledExpression:
    """A compiled scalar expression of the chart coordinates.

    Calling it with n coordinate arrays (broadcastable) returns the value
    array; scalars in, scalar out.
    """

    def __init__(self, source: str, coord_names: tuple[str, ...]):
        self.source = source.strip()
        self.coord_names = tuple(coord_names)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from exc
        _validate(tree, set(self.coord_names), self.source)
        self._code = compile(tree, "<expression>", "eval")

    def __call__(self, *coords):
        if len(coords) != len(self.coord_names):
            raise ExpressionError(
                f"expression {self.source!r} expects {len(self.coord_names)} "
                f"coordinates, got {len(coords)}"
            )
        env = dict(zip(self.coord_names, coords))
        env.update(_ALLOWED_FUNCS)
        env.update(_ALLOWED_CONSTS)
        out = eval(self._code, {"__builtins__": {}}, env)
        # Constant expressions must still broadcast to the input shape.
        if np.ndim(out) == 0 and coords and np.ndim(coords[0]) > 0:
            out = np.full(np.shape(coords[0]), float(out))
        return out

    def __repr__(self):
        return f"CompiledExpression({self.source!r})"


def compile_expression(source, coord_names) -> CompiledExpression:
    return CompiledExpression(str(source), tuple(coord_names))
