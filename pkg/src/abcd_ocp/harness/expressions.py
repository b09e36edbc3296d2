"""
Tiny expression grammar for analytic data fields.

Allowed: numbers, the identifiers ``x``, ``y``, ``pi``, binary ``+ - * / ^``,
unary ``+ -`` and the functions ``sin``, ``cos``, ``exp``.  ``^`` is power.
Expressions compile to vectorized callables ``f(x, y)``.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}
_VARS = ("x", "y")
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_UNOPS = {ast.UAdd: np.positive, ast.USub: np.negative}


class ExpressionError(ValueError):
    """Expression text outside the grammar."""


def _check(node: ast.AST, text: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, text)
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r} in {text!r}")
    elif isinstance(node, ast.Name):
        if node.id not in _VARS and node.id not in _CONSTS:
            raise ExpressionError(f"unknown identifier {node.id!r} in {text!r}")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"unsupported operator in {text!r}")
        _check(node.left, text)
        _check(node.right, text)
    elif isinstance(node, ast.UnaryOp):
        if type(node.op) not in _UNOPS:
            raise ExpressionError(f"unsupported unary operator in {text!r}")
        _check(node.operand, text)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError(f"unknown function in {text!r}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument in {text!r}")
        _check(node.args[0], text)
    else:
        raise ExpressionError(f"unsupported syntax {type(node).__name__} in {text!r}")


def _eval(node: ast.AST, x, y):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "x":
            return x
        if node.id == "y":
            return y
        return _CONSTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, x, y), _eval(node.right, x, y))
    if isinstance(node, ast.UnaryOp):
        return _UNOPS[type(node.op)](_eval(node.operand, x, y))
    return _FUNCS[node.func.id](_eval(node.args[0], x, y))


def parse_expression(text: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """
    Compile ``text`` into a callable of ``(x, y)``.

    Raises
    ------
    ExpressionError
        On syntax errors or anything outside the grammar.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    src = text.strip().replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    _check(tree, text)
    body = tree.body

    def field(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(all="ignore"):
            out = _eval(body, x, y)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape).copy()

    field.expression = text
    return field
