"""First-order sensitivities of lower-level solutions and their linearization.

At a regular lower-level maximizer (LICQ, strict complementarity, second
order sufficiency) the implicit function theorem applies to the active-set
KKT system, yielding derivatives Dy(x) and Dmu(x) of the maximizer and its
multipliers with respect to the upper-level variables.  These feed a
linearized Lagrangian constraint

    x  ->  g_i(x, yhat(x)) - sum_l muhat_l(x) * v_l(yhat(x))

with yhat, muhat the first-order predictions.  At the base point this
constraint reproduces g_i(x_base, y_base) and its x-gradient exactly, and
away from it the error in approximating max_y g_i(x, y) is second order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lower_level import LowerLevelSolution, _lagrangian_hessian
from .model import ScalarField, SipProblem

Array = np.ndarray

_RESIDUAL_TOL = 1e-8


class SensitivityError(RuntimeError):
    """KKT differentiation system is singular or badly inconsistent."""


@dataclass(frozen=True)
class KktSensitivity:
    """Derivatives of the lower-level primal-dual solution in x.

    dy_dx is (m, n); dmu_dx is (q, n) with rows of inactive constraints
    identically zero (the active set is locally constant under strict
    complementarity, so those multipliers stay at zero).
    """

    dy_dx: Array
    dmu_dx: Array
    condition_estimate: float


@dataclass(frozen=True)
class LinearizedConstraint:
    """Frozen linearization data for one semi-infinite constraint family."""

    index: int
    x_base: Array
    y_base: Array
    mu_base: Array
    sens: KktSensitivity

    def predicted_maximizer(self, x) -> Array:
        dx = np.asarray(x, dtype=float) - self.x_base
        return self.y_base + self.sens.dy_dx @ dx

    def predicted_multipliers(self, x) -> Array:
        dx = np.asarray(x, dtype=float) - self.x_base
        return self.mu_base + self.sens.dmu_dx @ dx


def compute_sensitivity(problem: SipProblem, i: int, x,
                        sol: LowerLevelSolution) -> KktSensitivity:
    """Solve the differentiated KKT system at a regular maximizer.

    With A the active set, differentiating {grad_y L = 0, v_A(y) = 0} in x
    gives

        [ D2_yy L   -Dv_A^T ] [ Dy   ]   [ -D2_yx g_i ]
        [ Dv_A         0    ] [ Dmu_A] = [      0     ]

    Raises SensitivityError when the matrix is singular or the solve does
    not reproduce the right-hand side to 1e-8 relative accuracy.
    """
    x = np.asarray(x, dtype=float)
    n, m = problem.n, problem.m
    vs = problem.index_constraints
    active = list(sol.active_set)
    a = len(active)

    h_full = problem.si_constraints[i].hessian(np.concatenate([x, sol.y]))
    d2_yx = h_full[n:, :n]
    h_lag = _lagrangian_hessian(problem, i, x, sol.y, sol.multipliers)

    kkt = np.zeros((m + a, m + a))
    kkt[:m, :m] = h_lag
    if a:
        va = np.stack([vs[l].gradient(sol.y) for l in active])
        kkt[:m, m:] = -va.T
        kkt[m:, :m] = va
    rhs = np.zeros((m + a, n))
    rhs[:m] = -d2_yx

    cond = float(np.linalg.cond(kkt)) if kkt.size else 0.0
    try:
        sol_mat = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise SensitivityError(
            f"singular KKT differentiation system for constraint {i} "
            f"(condition estimate {cond:.3e})") from exc
    residual = np.linalg.norm(kkt @ sol_mat - rhs)
    if residual > _RESIDUAL_TOL * (1.0 + np.linalg.norm(rhs)):
        raise SensitivityError(
            f"KKT differentiation residual {residual:.3e} too large for "
            f"constraint {i} (condition estimate {cond:.3e})")

    dy_dx = sol_mat[:m]
    dmu_dx = np.zeros((len(vs), n))
    for row, l in enumerate(active):
        dmu_dx[l] = sol_mat[m + row]
    return KktSensitivity(dy_dx=dy_dx, dmu_dx=dmu_dx, condition_estimate=cond)


def make_linearized_constraint(problem: SipProblem, i: int, x_k,
                               sol: LowerLevelSolution,
                               sens: KktSensitivity) -> LinearizedConstraint:
    x_k = np.asarray(x_k, dtype=float)
    return LinearizedConstraint(
        index=i, x_base=x_k.copy(), y_base=sol.y.copy(),
        mu_base=sol.multipliers.copy(), sens=sens)


def linearized_value_and_gradient(lc: LinearizedConstraint,
                                  problem: SipProblem, x):
    """Value and x-gradient of the linearized Lagrangian constraint.

    value = g_i(x, yhat) - sum_l muhat_l v_l(yhat)
    grad  = D1 g_i + Dy^T D2 g_i - sum_l [muhat_l Dy^T grad v_l + v_l dmu_l]

    At x = x_base this reduces to g_i(x_base, y_base) and D1 g_i exactly:
    complementarity kills the mu*v terms and KKT stationarity kills the
    Dy^T(...) terms.
    """
    x = np.asarray(x, dtype=float)
    n = problem.n
    g = problem.si_constraints[lc.index]
    dy = lc.sens.dy_dx
    dmu = lc.sens.dmu_dx

    y_hat = lc.predicted_maximizer(x)
    mu_hat = lc.predicted_multipliers(x)
    z = np.concatenate([x, y_hat])
    value = g.value(z)
    g_grad = g.gradient(z)
    grad = g_grad[:n] + dy.T @ g_grad[n:]
    for l, v in enumerate(problem.index_constraints):
        v_val = v.value(y_hat)
        value -= mu_hat[l] * v_val
        if mu_hat[l] != 0.0 or dmu[l].any():
            grad = grad - mu_hat[l] * (dy.T @ v.gradient(y_hat)) - v_val * dmu[l]
    return float(value), grad


def linearization_field(lc: LinearizedConstraint, problem: SipProblem,
                        name: str = "") -> ScalarField:
    """Wrap the linearized constraint as a scalar field over x (no Hessian)."""
    def _value(x):
        return linearized_value_and_gradient(lc, problem, x)[0]

    def _gradient(x):
        return linearized_value_and_gradient(lc, problem, x)[1]

    return ScalarField(
        arity=problem.n,
        name=name or f"lin_g{lc.index}",
        value=_value, gradient=_gradient)
