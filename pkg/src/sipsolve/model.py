"""Core problem data: scalar fields with derivatives and SIP instances.

A semi-infinite program (SIP) minimizes ``f(x)`` over ``x`` in a box, subject
to ``g_i(x, y) <= 0`` for every ``y`` in the index set
``Y = {y : v_l(y) <= 0 for all l}`` and to finitely many upper-level
constraints ``c_j(x) <= 0``.

All functions are carried as :class:`ScalarField` objects: plain callables
bundled with their exact gradient and (where needed) Hessian.  Constraint
fields ``g_i`` and ``v_l`` must supply Hessians; the objective only needs a
gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray

#: Half-width of the default bounding box placed on x when a problem does not
#: declare one.  The master subproblems always need finite bounds.
DEFAULT_BOUND = 1.0e3


class FieldEvaluationError(RuntimeError):
    """A scalar field could not be evaluated at a probe point."""


def _as_point(z, arity: int) -> Array:
    z = np.asarray(z, dtype=float)
    if z.shape != (arity,):
        raise ValueError(f"expected point of length {arity}, got shape {z.shape}")
    return z


class ScalarField:
    """Twice-differentiable scalar function of ``arity`` real variables.

    Parameters
    ----------
    arity:
        Number of input variables.
    value, gradient:
        Callables on 1-d arrays of length ``arity``.
    hessian:
        Optional callable returning the symmetric ``(arity, arity)`` Hessian.
        Required for lower-level constraint data, optional for objectives.
    value_batch:
        Optional vectorized evaluation of an ``(N, arity)`` array of points;
        a row-by-row fallback is used when absent.
    """

    __slots__ = ("arity", "name", "_value", "_gradient", "_hessian", "_batch")

    def __init__(self, arity, value, gradient, hessian=None, value_batch=None,
                 name=""):
        self.arity = int(arity)
        self.name = name
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self._batch = value_batch

    def __repr__(self):  # pragma: no cover - debugging aid
        label = self.name or "<anonymous>"
        return f"ScalarField({label}, arity={self.arity})"

    @property
    def has_hessian(self) -> bool:
        return self._hessian is not None

    def value(self, z) -> float:
        z = _as_point(z, self.arity)
        return float(self._value(z))

    def gradient(self, z) -> Array:
        z = _as_point(z, self.arity)
        g = np.asarray(self._gradient(z), dtype=float)
        if g.shape != (self.arity,):
            raise FieldEvaluationError(
                f"gradient of {self.name or 'field'} has shape {g.shape}, "
                f"expected ({self.arity},)")
        return g

    def hessian(self, z) -> Array:
        if self._hessian is None:
            raise FieldEvaluationError(
                f"field {self.name or '<anonymous>'} does not define a Hessian")
        z = _as_point(z, self.arity)
        h = np.asarray(self._hessian(z), dtype=float)
        if h.shape != (self.arity, self.arity):
            raise FieldEvaluationError(
                f"Hessian of {self.name or 'field'} has shape {h.shape}, "
                f"expected ({self.arity}, {self.arity})")
        return h

    def eval(self, z):
        """Return ``(value, gradient, hessian_or_None)`` at ``z``."""
        z = _as_point(z, self.arity)
        h = self.hessian(z) if self.has_hessian else None
        return self.value(z), self.gradient(z), h

    def value_batch(self, points) -> Array:
        """Values at every row of an ``(N, arity)`` array."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.arity:
            raise ValueError(f"expected (N, {self.arity}) array, got {points.shape}")
        if self._batch is not None:
            out = np.asarray(self._batch(points), dtype=float)
            return out.reshape(points.shape[0])
        return np.array([self._value(row) for row in points], dtype=float)


def restrict_to_x(field: ScalarField, n: int, y) -> ScalarField:
    """Freeze the index variables of a field over (x, y), leaving x free."""
    y = np.asarray(y, dtype=float)

    def val(x):
        return field.value(np.concatenate([x, y]))

    def grad(x):
        return field.gradient(np.concatenate([x, y]))[:n]

    hess = None
    if field.has_hessian:
        def hess(x):
            return field.hessian(np.concatenate([x, y]))[:n, :n]

    batch = None
    if field._batch is not None:
        def batch(X):
            Y = np.tile(y, (X.shape[0], 1))
            return field.value_batch(np.hstack([X, Y]))

    return ScalarField(n, val, grad, hess, batch,
                       name=f"{field.name}|y={np.array2string(y, precision=6)}")


def restrict_to_y(field: ScalarField, n: int, x) -> ScalarField:
    """Freeze the decision variables of a field over (x, y), leaving y free."""
    x = np.asarray(x, dtype=float)
    m = field.arity - n

    def val(y):
        return field.value(np.concatenate([x, y]))

    def grad(y):
        return field.gradient(np.concatenate([x, y]))[n:]

    hess = None
    if field.has_hessian:
        def hess(y):
            return field.hessian(np.concatenate([x, y]))[n:, n:]

    def batch(Y):
        X = np.tile(x, (Y.shape[0], 1))
        return field.value_batch(np.hstack([X, Y]))

    return ScalarField(m, val, grad, hess, batch, name=f"{field.name}|x fixed")


def negated(field: ScalarField) -> ScalarField:
    """The field -f, used to pose maximizations as minimizations."""
    hess = None
    if field.has_hessian:
        def hess(z):
            return -field.hessian(z)
    batch = None
    if field._batch is not None:
        def batch(Z):
            return -field.value_batch(Z)
    return ScalarField(field.arity,
                       lambda z: -field.value(z),
                       lambda z: -field.gradient(z),
                       hess, batch, name=f"-({field.name})")


@dataclass(frozen=True)
class SipProblem:
    """A semi-infinite program.

    ``objective`` is a field over x (arity n).  Each entry of
    ``si_constraints`` is a field over the concatenated point ``(x, y)``
    (arity n+m), each ``index_constraints`` entry over y (arity m), and each
    ``finite_constraints`` entry over x.  ``x_bounds`` is an (n, 2) array of
    finite per-coordinate intervals; infinite entries are replaced by the
    default box.  ``known_solution``/``known_objective`` are optional
    reference data, ``start`` an optional canonical initial point.
    """

    n: int
    m: int
    objective: ScalarField
    si_constraints: tuple
    index_constraints: tuple
    finite_constraints: tuple = ()
    x_bounds: Optional[Array] = None
    known_solution: Optional[Array] = None
    known_objective: Optional[float] = None
    start: Optional[Array] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "si_constraints", tuple(self.si_constraints))
        object.__setattr__(self, "index_constraints", tuple(self.index_constraints))
        object.__setattr__(self, "finite_constraints", tuple(self.finite_constraints))
        bounds = self.x_bounds
        if bounds is None:
            bounds = np.array([[-DEFAULT_BOUND, DEFAULT_BOUND]] * self.n)
        bounds = np.asarray(bounds, dtype=float).reshape(self.n, 2).copy()
        # master solves need a finite box; clamp declared infinities
        bounds[:, 0] = np.maximum(bounds[:, 0], -DEFAULT_BOUND)
        bounds[:, 1] = np.minimum(bounds[:, 1], DEFAULT_BOUND)
        object.__setattr__(self, "x_bounds", bounds)
        if self.known_solution is not None:
            object.__setattr__(self, "known_solution",
                               np.asarray(self.known_solution, dtype=float))
        if self.start is not None:
            object.__setattr__(self, "start", np.asarray(self.start, dtype=float))

    @property
    def n_si(self) -> int:
        return len(self.si_constraints)


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_problem`; never raises on bad data."""

    valid: bool
    issues: list

    def __str__(self):
        if self.valid:
            return "valid"
        return "; ".join(self.issues)


def _probe_field(field: ScalarField, z, label: str, issues: list,
                 need_hessian: bool) -> None:
    try:
        field.value(z)
    except Exception as exc:  # noqa: BLE001 - report, never raise
        issues.append(f"{label}: evaluation failed at probe point ({exc})")
        return
    try:
        field.gradient(z)
    except Exception as exc:  # noqa: BLE001
        issues.append(f"{label}: dimension mismatch or missing gradient ({exc})")
        return
    if not need_hessian:
        return
    if not field.has_hessian:
        issues.append(f"{label}: missing Hessian")
        return
    try:
        h = field.hessian(z)
    except Exception as exc:  # noqa: BLE001
        issues.append(f"{label}: dimension mismatch in Hessian ({exc})")
        return
    scale = max(1.0, float(np.abs(h).max()))
    if float(np.abs(h - h.T).max()) > 1e-12 * scale:
        issues.append(f"{label}: Hessian not symmetric")


def validate_problem(problem: SipProblem) -> ValidationReport:
    """Structural checks: dimensions, derivative availability, index set.

    Only reports problems; solver entry points assume a valid instance.
    """
    issues: list = []
    n, m = problem.n, problem.m
    if n < 1 or m < 1:
        issues.append(f"dimension mismatch: need n >= 1 and m >= 1, got n={n}, m={m}")
        return ValidationReport(False, issues)
    if not problem.si_constraints:
        issues.append("no semi-infinite constraints declared")
    if not problem.index_constraints:
        issues.append("no index-set constraints declared")

    bounds = problem.x_bounds
    if np.any(bounds[:, 0] > bounds[:, 1]):
        issues.append("dimension mismatch: x_bounds has lower > upper")
    x_probe = np.clip(np.zeros(n), bounds[:, 0], bounds[:, 1])
    y_probe = np.zeros(m)
    z_probe = np.concatenate([x_probe, y_probe])

    if problem.objective.arity != n:
        issues.append(f"objective: dimension mismatch (arity {problem.objective.arity}, expected {n})")
    else:
        _probe_field(problem.objective, x_probe, "objective", issues, need_hessian=False)
    for k, g in enumerate(problem.si_constraints):
        label = f"si_constraints[{k}]"
        if g.arity != n + m:
            issues.append(f"{label}: dimension mismatch (arity {g.arity}, expected {n + m})")
        else:
            _probe_field(g, z_probe, label, issues, need_hessian=True)
    for k, v in enumerate(problem.index_constraints):
        label = f"index_constraints[{k}]"
        if v.arity != m:
            issues.append(f"{label}: dimension mismatch (arity {v.arity}, expected {m})")
        else:
            _probe_field(v, y_probe, label, issues, need_hessian=True)
    for k, c in enumerate(problem.finite_constraints):
        label = f"finite_constraints[{k}]"
        if c.arity != n:
            issues.append(f"{label}: dimension mismatch (arity {c.arity}, expected {n})")
        else:
            _probe_field(c, x_probe, label, issues, need_hessian=False)

    if problem.known_solution is not None and problem.known_solution.shape != (n,):
        issues.append("known_solution: dimension mismatch")
    if problem.start is not None and problem.start.shape != (n,):
        issues.append("start: dimension mismatch")

    # Coarse grid probe of the index set: detect emptiness and evidence of
    # unboundedness (feasible nodes on the edge of a large scan box).
    ok_index = all(v.arity == m for v in problem.index_constraints)
    if problem.index_constraints and ok_index and m <= 3:
        width = 10.0
        axis = np.linspace(-width, width, 33)
        grids = np.meshgrid(*([axis] * m), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        feasible = np.ones(len(nodes), dtype=bool)
        try:
            for v in problem.index_constraints:
                feasible &= v.value_batch(nodes) <= 1e-9
        except Exception as exc:  # noqa: BLE001
            issues.append(f"index set probe failed ({exc})")
        else:
            if not feasible.any():
                issues.append("index set appears empty (no feasible point in scan box)")
            elif np.any(np.abs(nodes[feasible]).max(axis=1) >= width - 1e-12):
                issues.append("unbounded index set (feasible points on scan-box edge)")

    return ValidationReport(not issues, issues)


def verify_derivatives(field: ScalarField, points: Sequence, h: float = 1e-6) -> float:
    """Max relative error of the declared derivatives against central differences.

    Gradients are checked against central differences of the value; Hessians
    (when present) against central differences of the gradient.  Evaluation
    failures at probe points propagate as :class:`FieldEvaluationError`.
    """
    worst = 0.0
    d = field.arity
    for point in points:
        z = _as_point(point, d)
        try:
            grad = field.gradient(z)
            fd_grad = np.empty(d)
            cols = []
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                fd_grad[j] = (field.value(z + e) - field.value(z - e)) / (2 * h)
                if field.has_hessian:
                    cols.append((field.gradient(z + e) - field.gradient(z - e)) / (2 * h))
        except FieldEvaluationError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise FieldEvaluationError(
                f"evaluation failure at probe point {z}: {exc}") from exc
        err = np.abs(grad - fd_grad).max() / max(1.0, np.abs(fd_grad).max())
        worst = max(worst, float(err))
        if field.has_hessian:
            hess = field.hessian(z)
            fd_hess = np.stack(cols, axis=1)
            fd_hess = 0.5 * (fd_hess + fd_hess.T)
            err = np.abs(hess - fd_hess).max() / max(1.0, np.abs(fd_hess).max())
            worst = max(worst, float(err))
    return worst
