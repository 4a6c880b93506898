"""Dense SQP solver for small smooth nonlinear programs.

Solves  min f(z)  s.t.  c_j(z) <= 0,  lo <= z <= hi.

The QP subproblems are handled by a dual active-set method (start at the
unconstrained minimum, add the most violated constraint, take mixed
primal/dual steps, drop blocking constraints) which needs nothing beyond
dense linear solves and detects infeasible subproblems exactly.  The outer
loop is damped-BFGS SQP with an l1 merit line search; infeasible QPs fall
back to an elastic reformulation with a penalized slack.

Everything is deterministic: no randomness, fixed tie-breaking by lowest
constraint index.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import ScalarField

Array = np.ndarray

_QP_FEAS_TOL = 1e-11
_QP_ZERO_STEP = 1e-12


@dataclass(frozen=True)
class NlpProblem:
    """min objective(z) s.t. constraints <= 0 and lower <= z <= upper."""

    dim: int
    objective: ScalarField
    constraints: tuple = ()
    lower: Optional[Array] = None
    upper: Optional[Array] = None

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        lo = self.lower if self.lower is not None else np.full(self.dim, -np.inf)
        hi = self.upper if self.upper is not None else np.full(self.dim, np.inf)
        object.__setattr__(self, "lower", np.asarray(lo, dtype=float).reshape(self.dim))
        object.__setattr__(self, "upper", np.asarray(hi, dtype=float).reshape(self.dim))


@dataclass(frozen=True)
class NlpOptions:
    tol_kkt: float = 1e-9
    tol_feas: float = 1e-9
    tol_comp: float = 1e-9
    max_iter: int = 200
    elastic_rho: float = 1e4
    ls_max: int = 50


@dataclass
class NlpSolution:
    z: Array
    multipliers: Array          # one per inequality constraint, >= 0
    lower_multipliers: Array    # active lower-bound duals, >= 0
    upper_multipliers: Array
    kkt_residual: float
    max_violation: float
    status: str                 # 'converged' | 'max_iter' | 'qp_failure'
    iterations: int
    objective_value: float
    merit_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class QpResult:
    step: Array
    multipliers: Array          # duals of the A-rows
    lower_multipliers: Array
    upper_multipliers: Array
    status: str                 # 'optimal' | 'infeasible' | 'max_iter'
    slack: float = 0.0          # elastic relaxation used, 0 when none


# ---------------------------------------------------------------------------
# QP: dual active-set method for strictly convex problems
# ---------------------------------------------------------------------------

def _dual_active_set(H: Array, g: Array, C: Array, e: Array):
    """min 1/2 x'Hx + g'x  s.t.  C x <= e  with H positive definite.

    Returns (x, lam, status).  Ties in the most-violated selection and in the
    dual blocking test are broken toward the lowest row index.
    """
    d = H.shape[0]
    n_rows = C.shape[0]
    x = -np.linalg.solve(H, g)
    lam = np.zeros(n_rows)
    work: list = []     # active row indices, in order of addition
    lam_w: list = []

    for _ in range(4 * (n_rows + d) + 16):
        s = C @ x - e if n_rows else np.zeros(0)
        for j in work:
            s[j] = 0.0
        p = int(np.argmax(s)) if n_rows else 0
        if n_rows == 0 or s[p] <= _QP_FEAS_TOL * (1.0 + abs(e[p])):
            lam[:] = 0.0
            for j, val in zip(work, lam_w):
                lam[j] = max(val, 0.0)
            return x, lam, "optimal"

        normal = C[p]
        if np.abs(normal).max() == 0.0:
            return x, lam, "infeasible"   # 0'x <= e_p with e_p < 0
        lam_p = 0.0
        for _inner in range(n_rows + d + 8):
            k = len(work)
            if k:
                N = C[work].T
                kkt = np.zeros((d + k, d + k))
                kkt[:d, :d] = H
                kkt[:d, d:] = N
                kkt[d:, :d] = N.T
                rhs = np.concatenate([-normal, np.zeros(k)])
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    return x, lam, "max_iter"
                z = sol[:d]
                r = -sol[d:]
            else:
                z = -np.linalg.solve(H, normal)
                r = np.zeros(0)

            s_p = float(normal @ x - e[p])
            if np.abs(z).max() <= _QP_ZERO_STEP * (1.0 + np.abs(x).max()):
                # constraint normal lies in the span of the active set
                positive = r > 1e-12
                if not positive.any():
                    return x, lam, "infeasible"
                ratios = np.where(positive, np.array(lam_w) / np.where(positive, r, 1.0), np.inf)
                drop = int(np.argmin(ratios))
                t = float(ratios[drop])
                lam_w = [lw - t * rj for lw, rj in zip(lam_w, r)]
                lam_p += t
                work.pop(drop)
                lam_w.pop(drop)
                continue

            dsp = float(normal @ z)     # < 0 by construction
            t_full = -s_p / dsp
            positive = r > 1e-12
            if positive.any():
                ratios = np.where(positive, np.array(lam_w) / np.where(positive, r, 1.0), np.inf)
                drop = int(np.argmin(ratios))
                t_part = float(ratios[drop])
            else:
                drop, t_part = -1, np.inf

            t = min(t_full, t_part)
            x = x + t * z
            lam_w = [max(lw - t * rj, 0.0) for lw, rj in zip(lam_w, r)]
            lam_p += t
            if t_full <= t_part:
                work.append(p)
                lam_w.append(lam_p)
                break
            work.pop(drop)
            lam_w.pop(drop)
        else:
            return x, lam, "max_iter"

    return x, lam, "max_iter"


def _stack_rows(A: Array, b: Array, lower: Array, upper: Array):
    """Rows of A first, then finite lower bounds (-e_i), then upper (+e_i)."""
    d = len(lower)
    rows = [A] if A.size else []
    rhs = [b] if b.size else []
    lo_idx = [i for i in range(d) if np.isfinite(lower[i])]
    up_idx = [i for i in range(d) if np.isfinite(upper[i])]
    if lo_idx:
        E = np.zeros((len(lo_idx), d))
        for k, i in enumerate(lo_idx):
            E[k, i] = -1.0
        rows.append(E)
        rhs.append(-lower[lo_idx])
    if up_idx:
        E = np.zeros((len(up_idx), d))
        for k, i in enumerate(up_idx):
            E[k, i] = 1.0
        rows.append(E)
        rhs.append(upper[up_idx])
    C = np.vstack(rows) if rows else np.zeros((0, d))
    e = np.concatenate(rhs) if rhs else np.zeros(0)
    return C, e, lo_idx, up_idx


def solve_qp(H: Array, g: Array, A: Array, b: Array,
             lower: Optional[Array] = None, upper: Optional[Array] = None) -> QpResult:
    """min 1/2 d'Hd + g'd  s.t.  A d <= b,  lower <= d <= upper.

    ``H`` must be symmetric positive definite.  Returns the step, duals of
    the A-rows and the bound rows, and a status of 'optimal', 'infeasible'
    (inconsistent constraints), or 'max_iter'.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    d = len(g)
    A = np.asarray(A, dtype=float).reshape(-1, d) if np.size(A) else np.zeros((0, d))
    b = np.asarray(b, dtype=float).reshape(-1) if np.size(b) else np.zeros(0)
    lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=float)

    C, e, lo_idx, up_idx = _stack_rows(A, b, lower, upper)
    x, lam, status = _dual_active_set(H, g, C, e)

    n_rows = A.shape[0]
    lo_mult = np.zeros(d)
    up_mult = np.zeros(d)
    for k, i in enumerate(lo_idx):
        lo_mult[i] = lam[n_rows + k]
    for k, i in enumerate(up_idx):
        up_mult[i] = lam[n_rows + len(lo_idx) + k]
    if status == "optimal" and (lo_idx or up_idx):
        x = np.clip(x, lower, upper)   # remove <=1e-11 roundoff drift
    return QpResult(x, lam[:n_rows], lo_mult, up_mult, status)


def _solve_qp_elastic(H, g, A, b, lower, upper, rho: float) -> QpResult:
    """Relax A d <= b + s with one penalized slack s >= 0; always feasible."""
    d = len(g)
    n_rows = A.shape[0]
    scale = max(1.0, float(np.trace(H)) / max(d, 1))
    H_ext = np.zeros((d + 1, d + 1))
    H_ext[:d, :d] = H
    H_ext[d, d] = 1e-8 * scale
    g_ext = np.concatenate([g, [rho]])
    A_ext = np.hstack([A, -np.ones((n_rows, 1))]) if n_rows else np.zeros((0, d + 1))
    lo_ext = np.concatenate([lower, [0.0]])
    hi_ext = np.concatenate([upper, [np.inf]])
    res = solve_qp(H_ext, g_ext, A_ext, b, lo_ext, hi_ext)
    return QpResult(res.step[:d], res.multipliers,
                    res.lower_multipliers[:d], res.upper_multipliers[:d],
                    res.status, slack=float(res.step[d]))


# ---------------------------------------------------------------------------
# SQP outer loop
# ---------------------------------------------------------------------------

def _eval_constraints(problem: NlpProblem, z: Array):
    r = len(problem.constraints)
    values = np.zeros(r)
    jac = np.zeros((r, problem.dim))
    for j, c in enumerate(problem.constraints):
        values[j] = c.value(z)
        jac[j] = c.gradient(z)
    return values, jac


def _constraint_values(problem: NlpProblem, z: Array) -> Array:
    return np.array([c.value(z) for c in problem.constraints], dtype=float)


def _damped_bfgs(B: Array, s: Array, y: Array) -> Array:
    """Powell-damped BFGS update; keeps B positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-16:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(s @ y)
    if sy <= 1e-14:
        return B
    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
    return 0.5 * (B + B.T)


def solve_nlp(problem: NlpProblem, z0, options: Optional[NlpOptions] = None) -> NlpSolution:
    """Damped-BFGS SQP with an l1 merit line search.

    Returns status 'converged' when the KKT residual, feasibility, and
    complementarity all meet their tolerances; 'max_iter' with the best
    iterate otherwise; 'qp_failure' if even the elastic QP cannot be solved.
    """
    opts = options or NlpOptions()
    d = problem.dim
    lo, hi = problem.lower, problem.upper
    z = np.clip(np.asarray(z0, dtype=float).reshape(d), lo, hi)

    B = np.eye(d)
    sigma = 1.0
    rho = opts.elastic_rho
    merit_history: list = []
    fgrad = problem.objective.gradient(z)
    fval = problem.objective.value(z)
    cvals, jac = _eval_constraints(problem, z)
    best = None
    ls_failures = 0
    iterations = 0

    def snapshot(status, lam, lo_mult, up_mult, kkt, viol):
        return NlpSolution(z.copy(), lam.copy(), lo_mult.copy(), up_mult.copy(),
                           float(kkt), float(viol), status, iterations,
                           float(fval), merit_history)

    for iterations in range(1, opts.max_iter + 1):
        qp = solve_qp(B, fgrad, jac, -cvals, lo - z, hi - z)
        if qp.status == "infeasible":
            qp = _solve_qp_elastic(B, fgrad, jac, -cvals, lo - z, hi - z, rho)
            rho *= 2.0
        if qp.status != "optimal":
            lam = np.zeros(len(problem.constraints))
            return snapshot("qp_failure", lam, np.zeros(d), np.zeros(d),
                            np.inf, max(0.0, cvals.max(initial=0.0)))

        lam = qp.multipliers
        grad_lagrangian = fgrad + jac.T @ lam - qp.lower_multipliers + qp.upper_multipliers
        kkt = np.linalg.norm(grad_lagrangian)
        viol = max(0.0, cvals.max(initial=0.0))
        comp = np.abs(lam * cvals).max(initial=0.0)
        if kkt <= opts.tol_kkt and viol <= opts.tol_feas and comp <= opts.tol_comp:
            return snapshot("converged", lam, qp.lower_multipliers,
                            qp.upper_multipliers, kkt, viol)

        key = (viol > opts.tol_feas, viol, fval)
        if best is None or key < best[0]:
            best = (key, z.copy(), fval)

        step = qp.step
        if np.linalg.norm(step) <= 1e-13 * (1.0 + np.linalg.norm(z)):
            ls_failures += 1
            if ls_failures >= 2:
                break
            B = np.eye(d)
            continue

        sigma = max(sigma, 1.1 * lam.max(initial=0.0) + 1e-4)
        viol_l1 = np.maximum(cvals, 0.0).sum()
        lin_after = np.maximum(cvals + jac @ step, 0.0).sum()
        merit0 = fval + sigma * viol_l1
        descent = float(fgrad @ step) - sigma * (viol_l1 - lin_after)
        if descent > -1e-14:
            descent = -1e-14

        alpha = 1.0
        accepted = False
        for _ in range(opts.ls_max):
            z_new = np.clip(z + alpha * step, lo, hi)
            f_new = problem.objective.value(z_new)
            c_new = _constraint_values(problem, z_new)
            merit_new = f_new + sigma * np.maximum(c_new, 0.0).sum()
            if merit_new <= merit0 + 1e-4 * alpha * descent:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            ls_failures += 1
            if ls_failures >= 2:
                break
            B = np.eye(d)
            continue
        ls_failures = 0
        merit_history.append(merit_new)

        grad_old = fgrad + jac.T @ lam
        fgrad_new = problem.objective.gradient(z_new)
        c_new, jac_new = _eval_constraints(problem, z_new)
        grad_new = fgrad_new + jac_new.T @ lam
        s = z_new - z
        B = _damped_bfgs(B, s, grad_new - grad_old)
        assert np.linalg.eigvalsh(B)[0] > 0.0

        z = z_new
        fval, fgrad = f_new, fgrad_new
        cvals, jac = c_new, jac_new

    # not converged: report honest residuals at the best iterate found
    if best is not None and tuple(best[1]) != tuple(z):
        candidate_key = (max(0.0, cvals.max(initial=0.0)) > opts.tol_feas,
                         max(0.0, cvals.max(initial=0.0)), fval)
        if best[0] < candidate_key:
            z = best[1]
            fval = problem.objective.value(z)
            fgrad = problem.objective.gradient(z)
            cvals, jac = _eval_constraints(problem, z)
    qp = solve_qp(B, fgrad, jac, -cvals, lo - z, hi - z)
    if qp.status != "optimal":
        qp = _solve_qp_elastic(B, fgrad, jac, -cvals, lo - z, hi - z, rho)
    if qp.status == "optimal":
        lam = qp.multipliers
        kkt = np.linalg.norm(fgrad + jac.T @ lam - qp.lower_multipliers + qp.upper_multipliers)
        lo_mult, up_mult = qp.lower_multipliers, qp.upper_multipliers
    else:
        lam = np.zeros(len(problem.constraints))
        kkt = np.inf
        lo_mult = up_mult = np.zeros(d)
    viol = max(0.0, cvals.max(initial=0.0))
    return NlpSolution(z.copy(), lam.copy(), lo_mult.copy(), up_mult.copy(),
                       float(kkt), float(viol), "max_iter", iterations,
                       float(fval), merit_history)
