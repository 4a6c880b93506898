"""Problem definition files: a small YAML dialect compiled to SipProblem.

Schema (see README for a complete example)::

    name: example1                  # optional string
    n: 2                            # number of decision variables x1..xn
    m: 1                            # number of index variables y1..ym
    objective: "-x1 + 1.5*x2"       # expression over x only
    si_constraints:                 # >= 1 expressions over x and y, g <= 0
      - "-y1^2 + 2*y1*x1 - x2"
    index_constraints:              # >= 1 expressions over y only, v <= 0
      - "y1 - 1"
      - "-y1 - 1"
    finite_constraints: []          # optional expressions over x, c <= 0
    x_bounds: [[-1, 1], [-1, 1]]    # optional, n pairs [lo, hi]
    x0: [1, -1]                     # optional canonical start
    known_solution: [0.333, 0.111]  # optional reference minimizer
    known_objective: -0.1666        # optional reference value

Expressions use variables x1..xn / y1..ym, the operators + - * / ^ and the
functions sin, cos, exp, log, sqrt.  Compiled fields get exact gradients and
Hessians via forward-mode AD.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .expressions import (Expression, SpecParseError, eval_taylor2, eval_value,
                          parse_expression, variables)
from .model import ScalarField, SipProblem


_KNOWN_KEYS = {"name", "n", "m", "objective", "si_constraints",
               "index_constraints", "finite_constraints", "x_bounds",
               "x0", "known_solution", "known_objective"}


@dataclass
class ProblemSpecFile:
    """Parsed, dimension-checked problem document (expressions still text)."""

    name: str
    n: int
    m: int
    objective: str
    si_constraints: list
    index_constraints: list
    finite_constraints: list
    x_bounds: Optional[list]
    x0: Optional[list]
    known_solution: Optional[list]
    known_objective: Optional[float]
    asts: dict = field(repr=False, default_factory=dict)


class SpecFileError(ValueError):
    """Structural error in a problem document (bad key, type, or dimension)."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise SpecFileError(message)


def _parse_expr(text, where: str, n: int, m: int, allow_x: bool, allow_y: bool):
    _require(isinstance(text, str), f"{where}: expected an expression string")
    try:
        ast = parse_expression(text)
    except SpecParseError as exc:
        raise SpecParseError(f"{where}: {exc.message}", exc.line, exc.col) from None
    for kind, index in sorted(variables(ast)):
        if kind == "x":
            _require(allow_x, f"{where}: x variables are not allowed here")
            _require(index <= n, f"{where}: references x{index} but n={n}")
        else:
            _require(allow_y, f"{where}: y variables are not allowed here")
            _require(index <= m, f"{where}: references y{index} but m={m}")
    return ast


def _expr_list(doc, key: str, n: int, m: int, allow_x: bool, allow_y: bool,
               required: bool, asts: dict) -> list:
    items = doc.get(key, [])
    if items is None:
        items = []
    _require(isinstance(items, list), f"{key}: expected a list of expressions")
    _require(not required or items, f"{key}: at least one constraint is required")
    out = []
    for k, text in enumerate(items):
        ast = _parse_expr(text, f"{key}[{k}]", n, m, allow_x, allow_y)
        asts[(key, k)] = ast
        out.append(text)
    return out


def parse_spec(text: str) -> ProblemSpecFile:
    """Parse a YAML problem document into a validated spec structure."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecFileError(f"not a valid YAML document: {exc}") from None
    _require(isinstance(doc, dict), "document must be a mapping of keys to values")
    unknown = sorted(set(doc) - _KNOWN_KEYS)
    _require(not unknown, f"unknown key(s): {', '.join(map(str, unknown))}")
    for key in ("n", "m", "objective", "si_constraints", "index_constraints"):
        _require(key in doc, f"missing required key: {key}")
    n, m = doc["n"], doc["m"]
    _require(isinstance(n, int) and n >= 1, "n must be an integer >= 1")
    _require(isinstance(m, int) and m >= 1, "m must be an integer >= 1")

    asts: dict = {}
    objective = doc["objective"]
    asts[("objective", 0)] = _parse_expr(objective, "objective", n, m,
                                         allow_x=True, allow_y=False)
    si = _expr_list(doc, "si_constraints", n, m, True, True, True, asts)
    index = _expr_list(doc, "index_constraints", n, m, False, True, True, asts)
    finite = _expr_list(doc, "finite_constraints", n, m, True, False, False, asts)

    x_bounds = doc.get("x_bounds")
    if x_bounds is not None:
        _require(isinstance(x_bounds, list) and len(x_bounds) == n,
                 f"x_bounds: expected {n} [lo, hi] pairs")
        for pair in x_bounds:
            _require(isinstance(pair, list) and len(pair) == 2,
                     "x_bounds: each entry must be a [lo, hi] pair")
            lo, hi = float(pair[0]), float(pair[1])
            _require(lo <= hi, f"x_bounds: lower {lo} exceeds upper {hi}")

    def _point(key: str):
        value = doc.get(key)
        if value is None:
            return None
        _require(isinstance(value, list) and len(value) == n,
                 f"{key}: expected a list of {n} numbers")
        return [float(v) for v in value]

    known_objective = doc.get("known_objective")
    if known_objective is not None:
        known_objective = float(known_objective)

    return ProblemSpecFile(
        name=str(doc.get("name", "")),
        n=n, m=m,
        objective=objective,
        si_constraints=si,
        index_constraints=index,
        finite_constraints=finite,
        x_bounds=x_bounds,
        x0=_point("x0"),
        known_solution=_point("known_solution"),
        known_objective=known_objective,
        asts=asts,
    )


def _compile_field(ast: Expression, n: int, m: int, layout: str, name: str) -> ScalarField:
    """Build a ScalarField from an AST.

    layout 'xy': arity n+m with x in z[:n], y in z[n:];
    layout 'x': arity n; layout 'y': arity m.
    """
    if layout == "xy":
        arity = n + m
        slots = {("x", i + 1): i for i in range(n)}
        slots.update({("y", j + 1): n + j for j in range(m)})
    elif layout == "x":
        arity = n
        slots = {("x", i + 1): i for i in range(n)}
    else:
        arity = m
        slots = {("y", j + 1): j for j in range(m)}

    def taylor(z):
        env = {key: (slot, z[slot]) for key, slot in slots.items()}
        return eval_taylor2(ast, env, arity)

    def value(z):
        env = {key: z[slot] for key, slot in slots.items()}
        return float(eval_value(ast, env))

    def batch(Z):
        env = {key: Z[:, slot] for key, slot in slots.items()}
        return np.broadcast_to(eval_value(ast, env), (Z.shape[0],))

    return ScalarField(arity, value,
                       lambda z: taylor(z).g,
                       lambda z: taylor(z).h,
                       batch, name=name)


def compile_spec(spec: ProblemSpecFile) -> SipProblem:
    """Compile a parsed document into a solvable problem instance."""
    n, m = spec.n, spec.m
    objective = _compile_field(spec.asts[("objective", 0)], n, m, "x", "objective")
    si = tuple(_compile_field(spec.asts[("si_constraints", k)], n, m, "xy", f"g{k + 1}")
               for k in range(len(spec.si_constraints)))
    index = tuple(_compile_field(spec.asts[("index_constraints", k)], n, m, "y", f"v{k + 1}")
                  for k in range(len(spec.index_constraints)))
    finite = tuple(_compile_field(spec.asts[("finite_constraints", k)], n, m, "x", f"c{k + 1}")
                   for k in range(len(spec.finite_constraints)))
    return SipProblem(
        n=n, m=m,
        objective=objective,
        si_constraints=si,
        index_constraints=index,
        finite_constraints=finite,
        x_bounds=np.asarray(spec.x_bounds, dtype=float) if spec.x_bounds else None,
        known_solution=spec.known_solution,
        known_objective=spec.known_objective,
        start=spec.x0,
        name=spec.name,
    )


def load_problem(path) -> SipProblem:
    """Read, parse, and compile a problem document from ``path``."""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    spec = parse_spec(text)
    problem = compile_spec(spec)
    if not problem.name:
        import os
        stem = os.path.splitext(os.path.basename(str(path)))[0]
        object.__setattr__(problem, "name", stem)
    return problem
