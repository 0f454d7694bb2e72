"""Tiny arithmetic grammar for coefficient expressions.

Accepted: numbers, the variables ``t`` and ``x``, ``+ - * / ^`` (``^`` is power),
``exp``, ``tanh`` and parentheses.  Expressions compile to numpy-vectorised
callables ``f(t, x)``.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

_FUNCS = {"exp": np.exp, "tanh": np.tanh}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


class ExpressionError(ValueError):
    pass


def _build(node: ast.AST) -> Callable:
    if isinstance(node, ast.Expression):
        return _build(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        c = float(node.value)
        return lambda t, x: c
    if isinstance(node, ast.Name):
        if node.id == "t":
            return lambda t, x: t
        if node.id == "x":
            return lambda t, x: x
        raise ExpressionError(f"unknown variable {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _build(node.operand)
        if isinstance(node.op, ast.USub):
            return lambda t, x: -inner(t, x)
        return inner
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left, right = _build(node.left), _build(node.right)
        return lambda t, x: op(left(t, x), right(t, x))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        fn, arg = _FUNCS[node.func.id], _build(node.args[0])
        return lambda t, x: fn(arg(t, x))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)}")


def compile_expression(text: str) -> Callable[[float, np.ndarray], np.ndarray]:
    """Compile ``text`` into ``f(t, x)`` returning an array broadcast to ``x``."""
    if "**" in text:
        raise ExpressionError("use '^' for powers")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    body = _build(tree)

    def f(t, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = body(t, x)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, np.asarray(t)).shape).copy()

    f.__doc__ = text
    f.source = text
    return f
