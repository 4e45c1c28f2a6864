"""
Expression trees for user-defined Lagrangians and Hamiltonians

A tree is a number, a variable name ("t", "q0", "v1", "p0", ...) or a list
whose head is an operator: sum, prod, pow, sin, cos, exp, log, neg.
"""

import re
from dataclasses import dataclass
from typing import Any, Dict, Set, Tuple

import numpy as np

from app.core.errors import ModelConfigError

_UNARY = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "neg": np.negative,
}
_VARIABLE = re.compile(r"^(t|[qvp]\d+)$")


@dataclass(frozen=True)
class Expression:
    """Parsed expression tree"""
    head: str
    args: Tuple[Any, ...] = ()
    value: float = 0.0

    def evaluate(self, env: Dict[str, np.ndarray]) -> np.ndarray:
        if self.head == "const":
            return np.asarray(self.value, dtype=float)
        if self.head == "var":
            return env[self.args[0]]
        vals = [a.evaluate(env) for a in self.args]
        if self.head == "sum":
            out = vals[0]
            for v in vals[1:]:
                out = out + v
            return out
        if self.head == "prod":
            out = vals[0]
            for v in vals[1:]:
                out = out * v
            return out
        if self.head == "pow":
            return np.power(vals[0], vals[1])
        return _UNARY[self.head](vals[0])

    def variables(self) -> Set[str]:
        if self.head == "var":
            return {self.args[0]}
        if self.head == "const":
            return set()
        out: Set[str] = set()
        for a in self.args:
            out |= a.variables()
        return out


def parse_expression(tree: Any) -> Expression:
    """Parse a nested list tree"""
    if isinstance(tree, bool):
        raise ModelConfigError("booleans are not expressions")
    if isinstance(tree, (int, float)):
        return Expression("const", value=float(tree))
    if isinstance(tree, str):
        if not _VARIABLE.match(tree):
            raise ModelConfigError(f"unknown variable '{tree}'")
        return Expression("var", (tree,))
    if isinstance(tree, (list, tuple)) and tree:
        head, *rest = tree
        if head in ("sum", "prod"):
            if not rest:
                raise ModelConfigError(f"'{head}' needs arguments")
        elif head == "pow":
            if len(rest) != 2:
                raise ModelConfigError("'pow' takes two arguments")
        elif head in _UNARY:
            if len(rest) != 1:
                raise ModelConfigError(f"'{head}' takes one argument")
        else:
            raise ModelConfigError(f"unknown operator '{head}'")
        return Expression(head, tuple(parse_expression(a) for a in rest))
    raise ModelConfigError(f"cannot parse expression node {tree!r}")


def build_env(t: np.ndarray, q: np.ndarray, fiber: np.ndarray, fiber_name: str) -> Dict[str, np.ndarray]:
    env = {"t": t}
    for i in range(q.shape[1]):
        env[f"q{i}"] = q[:, i]
        env[f"{fiber_name}{i}"] = fiber[:, i]
    return env


def check_variables(expr: Expression, dim: int, fiber_name: str):
    allowed = {"t"} | {f"q{i}" for i in range(dim)} | {f"{fiber_name}{i}" for i in range(dim)}
    extra = expr.variables() - allowed
    if extra:
        raise ModelConfigError(f"expression uses unavailable variables {sorted(extra)}")
