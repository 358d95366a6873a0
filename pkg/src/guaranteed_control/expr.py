"""Tiny expression language for inline right-hand sides and costs.

Grammar: numbers, the names ``t``, ``x1..xn``, ``u1..up``, ``v1..vq``, the
operators ``+ - *`` (binary and unary minus), parentheses and ``max(...)`` /
``min(...)`` with two or more arguments. Everything else is rejected.
Evaluation is vectorised over leading array axes.
"""

from __future__ import annotations

import ast
import re

import numpy as np

_NAME = re.compile(r"^(x|u|v)([1-9][0-9]*)$")


class ExpressionError(ValueError):
    pass


class Expression:
    def __init__(self, text: str, n: int, p: int = 0, q: int = 0, allow: str = "txuv"):
        self.text = text
        self.dims = {"x": n, "u": p, "v": q}
        self.allow = allow
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
        self._check(tree.body)
        self.tree = tree.body

    def _check(self, node) -> None:
        if isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult)):
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unary operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in ("max", "min")):
                raise ExpressionError(f"only max/min calls are allowed in {self.text!r}")
            if node.keywords or len(node.args) < 2:
                raise ExpressionError(f"max/min need two or more positional arguments in {self.text!r}")
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"bad constant in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id == "t":
                if "t" not in self.allow:
                    raise ExpressionError(f"'t' not allowed in {self.text!r}")
                return
            m = _NAME.match(node.id)
            if not m or m.group(1) not in self.allow:
                raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
            if int(m.group(2)) > self.dims[m.group(1)]:
                raise ExpressionError(f"{node.id} exceeds dimension {self.dims[m.group(1)]}")
        else:
            raise ExpressionError(f"{type(node).__name__} not allowed in {self.text!r}")

    def __call__(self, t, x, u=None, v=None):
        env = {"t": t, "x": x, "u": u, "v": v}
        return self._eval(self.tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            a = self._eval(node.left, env)
            b = self._eval(node.right, env)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            return a * b
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Call):
            args = [self._eval(a, env) for a in node.args]
            fn = np.maximum if node.func.id == "max" else np.minimum
            out = args[0]
            for a in args[1:]:
                out = fn(out, a)
            return out
        if isinstance(node, ast.Constant):
            return float(node.value)
        if node.id == "t":
            return env["t"]
        m = _NAME.match(node.id)
        arr = np.asarray(env[m.group(1)], float)
        return arr[..., int(m.group(2)) - 1]

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"


class InlineRHS:
    """Vector field assembled from one expression per state component."""

    def __init__(self, texts: list[str], n: int, p: int, q: int):
        if len(texts) != n:
            raise ExpressionError(f"need {n} component expressions, got {len(texts)}")
        self.exprs = [Expression(s, n, p, q) for s in texts]
        self.n = n

    def __call__(self, t, x, u, v):
        lead = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1], np.shape(v)[:-1])
        comps = [np.broadcast_to(np.asarray(e(t, x, u, v), float), lead) for e in self.exprs]
        return np.stack(comps, axis=-1)


class TerminalExpression:
    """Cost depending on the final state only."""

    def __init__(self, text: str, n: int):
        self.expr = Expression(text, n, allow="x")

    def __call__(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.asarray(self.expr(None, x), float), x.shape[:-1])

    def of_trajectory(self, traj) -> float:
        return float(self(traj.final))
