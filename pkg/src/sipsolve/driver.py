"""Adaptive discretization loops for semi-infinite programs.

Two drivers share one iteration skeleton:

* ``run_blankenship_falk``: solve the discretized master, then add the
  global lower-level maximizers to the discretization and repeat.
* ``run_qcad``: additionally linearize the lower-level primal-dual solution
  map at the current iterate (for every constraint family whose maximizer
  is regular) and put the resulting linearized Lagrangian constraint into
  the master.  The linearizations are rebuilt from scratch each iteration;
  stale ones are dropped.

Iterate bookkeeping: ``history[0]`` is the input point.  Each iteration
solves the lower levels at x^k, records the iterate, checks termination,
extends the discretization and solves the master for x^{k+1}.  The record
for iterate k therefore carries the multipliers of the master that
produced x^k (none for k = 0).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .diagnostics import perturbation_params, stationarity_residual
from .lower_level import LlOptions, LowerLevelError, solve_all_lower_levels
from .model import SipProblem, restrict_to_x
from .nlp import NlpOptions, NlpProblem, solve_nlp
from .sensitivity import (SensitivityError, compute_sensitivity,
                          linearization_field, make_linearized_constraint)

Array = np.ndarray

_DEDUP_TOL = 1e-12
_STAGNATION_LIMIT = 3


@dataclass
class DriverOptions:
    mode: str = "practical"             # "practical" or "known"
    tol_dist: float = 1e-4              # known-solution mode
    tol_feas: float = 1e-6              # practical mode: SIP feasibility
    tol_stat: float = 1e-6              # practical mode: stationarity residual
    max_iter: int = 50
    tol_act: float = 1e-6               # active-index threshold in diagnostics
    trust_radius: Optional[float] = 2.0  # sup-norm cap on each master step
    ll_options: LlOptions = field(default_factory=LlOptions)
    nlp_options: NlpOptions = field(default_factory=NlpOptions)
    collect_perturbation: bool = True


@dataclass
class DiscretizationState:
    """Per-family point lists; grows by set union, never shrinks."""

    points: list
    k: int = 0

    @classmethod
    def empty(cls, n_families: int) -> "DiscretizationState":
        return cls(points=[[] for _ in range(n_families)], k=0)

    def add(self, i: int, y) -> bool:
        """Add y to family i unless a copy is already present."""
        y = np.asarray(y, dtype=float).reshape(-1)
        for existing in self.points[i]:
            if np.linalg.norm(existing - y) <= _DEDUP_TOL:
                return False
        self.points[i].append(y.copy())
        return True

    def copy(self) -> "DiscretizationState":
        return DiscretizationState(
            points=[[y.copy() for y in fam] for fam in self.points], k=self.k)

    def n_points(self, i: int) -> int:
        return len(self.points[i])

    def total_points(self) -> int:
        return sum(len(fam) for fam in self.points)


@dataclass
class IterateRecord:
    k: int
    x: Array
    objective: float
    feasibility: float
    stationarity_residual: float
    dist_to_known: Optional[float]
    step_norm: Optional[float]
    beta_norm: Optional[float]
    alpha_max: Optional[float]
    n_constraints_in_master: Optional[int]
    wall_time_ms: Optional[float]
    lower_level: list = field(default_factory=list)
    linearizations: dict = field(default_factory=dict)
    lambda_bar: Optional[Array] = None
    warnings: list = field(default_factory=list)


@dataclass
class RunResult:
    history: list
    final_status: str                   # tolerance_met | max_iter | subsolver_failure
    final_discretization: DiscretizationState
    warnings: list
    algorithm: str = ""
    problem_name: str = ""

    @property
    def final(self) -> IterateRecord:
        return self.history[-1]

    @property
    def x(self) -> Array:
        return self.history[-1].x


def check_termination(history, opts: DriverOptions) -> Optional[str]:
    """Status string when the run should stop, else None."""
    rec = history[-1]
    if opts.mode == "known":
        if rec.dist_to_known is not None and rec.dist_to_known <= opts.tol_dist:
            return "tolerance_met"
    else:
        if rec.feasibility <= opts.tol_feas \
                and rec.stationarity_residual <= opts.tol_stat:
            return "tolerance_met"
    if rec.k >= opts.max_iter:
        return "max_iter"
    return None


def _master_problem(problem: SipProblem, disc: DiscretizationState,
                    lin_fields, center: Array,
                    trust_radius: Optional[float]) -> tuple:
    """Discretized NLP and, per row, the family tags for multiplier sums.

    The linearized constraints are local models, valid near the iterate
    they were built at; the master is therefore solved inside a sup-norm
    trust box around the current iterate (intersected with the variable
    bounds).  Near convergence the box is inactive.
    """
    constraints = []
    tags = []
    for i in range(problem.n_si):
        g = problem.si_constraints[i]
        for j, y in enumerate(disc.points[i]):
            constraints.append(restrict_to_x(g, problem.n, y))
            tags.append(("si", i))
    for i, fld in lin_fields.items():
        constraints.append(fld)
        tags.append(("lin", i))
    for j, c in enumerate(problem.finite_constraints):
        constraints.append(c)
        tags.append(("finite", j))
    lower = problem.x_bounds[:, 0]
    upper = problem.x_bounds[:, 1]
    if trust_radius is not None:
        lower = np.maximum(lower, center - trust_radius)
        upper = np.minimum(upper, center + trust_radius)
    nlp = NlpProblem(
        dim=problem.n,
        objective=problem.objective,
        constraints=tuple(constraints),
        lower=lower,
        upper=upper)
    return nlp, tags


def _snap_to_bounds(nlp: NlpProblem, sol, snap_tol: float = 1e-4):
    """Project near-bound coordinates exactly onto their bound.

    Degenerate masters (a constraint row parallel to an active bound)
    converge with a coordinate a few 1e-5 off the bound: the row value
    scales quadratically with the offset and meets the feasibility
    tolerance early.  The projection is kept only when it does not hurt
    feasibility or the objective.
    """
    z = sol.z.copy()
    hit = False
    for j in range(len(z)):
        if np.isfinite(nlp.lower[j]) and 0.0 < z[j] - nlp.lower[j] <= snap_tol:
            z[j] = nlp.lower[j]
            hit = True
        elif np.isfinite(nlp.upper[j]) and 0.0 < nlp.upper[j] - z[j] <= snap_tol:
            z[j] = nlp.upper[j]
            hit = True
    if not hit:
        return sol
    viol = max((c.value(z) for c in nlp.constraints), default=0.0)
    f_new = nlp.objective.value(z)
    # l1-merit comparison: trade objective against infeasibility
    rho = 1e4
    merit_new = f_new + rho * max(viol, 0.0)
    merit_old = sol.objective_value + rho * max(sol.max_violation, 0.0)
    if merit_new <= merit_old + 1e-12 * (1.0 + abs(merit_old)):
        return replace(sol, z=z, objective_value=f_new,
                       max_violation=viol)
    return sol


def _solve_master(nlp: NlpProblem, warm: Array, cold: Array,
                  opts: NlpOptions):
    """Solve from the warm start and from the run's original start.

    The master is nonconvex in general; a warm start close to a spurious
    KKT point can stall there.  Both solutions are ranked by (converged,
    feasible, objective) and the best is kept, preferring the warm one on
    ties.
    """
    candidates = [_snap_to_bounds(nlp, solve_nlp(nlp, warm, opts))]
    if np.linalg.norm(warm - cold) > 1e-12:
        candidates.append(_snap_to_bounds(nlp, solve_nlp(nlp, cold, opts)))

    def rank(sol):
        return (0 if sol.converged else 1,
                0 if sol.max_violation <= 1e-7 else 1,
                sol.objective_value)

    return min(candidates, key=rank)


def _aggregate_multipliers(n_si: int, tags, multipliers) -> Array:
    """Sum master multipliers over each semi-infinite family."""
    lam_bar = np.zeros(n_si)
    for tag, lam in zip(tags, multipliers):
        kind, i = tag
        if kind in ("si", "lin"):
            lam_bar[i] += lam
    return lam_bar


def _run(problem: SipProblem, x0, d0: Optional[DiscretizationState],
         opts: DriverOptions, use_linearization: bool,
         algorithm: str) -> RunResult:
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (problem.n,):
        raise ValueError(f"x0 must have shape ({problem.n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    if opts.mode == "known" and problem.known_solution is None:
        raise ValueError("known-solution mode needs a problem with a known solution")

    disc = d0.copy() if d0 is not None else DiscretizationState.empty(problem.n_si)
    x_start = x.copy()
    history = []
    warnings = []
    prev_x = None
    prev_lambda_bar = None
    prev_n_master = None
    best_feasibility = np.inf
    stagnant = 0
    status = "max_iter"

    for k in range(opts.max_iter + 1):
        t0 = time.perf_counter()
        try:
            ll = solve_all_lower_levels(problem, x, opts.ll_options)
        except LowerLevelError as exc:
            warnings.append(f"iteration {k}: lower-level solve failed: {exc}")
            status = "subsolver_failure"
            break

        rec_warnings = []
        for sol in ll:
            if sol.multiple_global:
                msg = (f"iteration {k}: constraint {sol.index} has multiple "
                       "global lower-level maximizers")
                rec_warnings.append(msg)
                warnings.append(msg)

        feasibility = max(s.value for s in ll)
        report = stationarity_residual(problem, x, tol_act=opts.tol_act,
                                       ll_solutions=ll)
        dist = None
        if problem.known_solution is not None:
            dist = float(np.linalg.norm(x - problem.known_solution))

        beta_norm = None
        alpha_max = None
        lambda_bar = prev_lambda_bar
        if opts.collect_perturbation and lambda_bar is not None:
            params = perturbation_params(problem, x, ll, lambda_bar)
            beta_norm = params.beta_norm
            alpha_max = params.alpha_max

        rec = IterateRecord(
            k=k, x=x.copy(),
            objective=problem.objective.value(x),
            feasibility=feasibility,
            stationarity_residual=report.residual,
            dist_to_known=dist,
            step_norm=(float(np.linalg.norm(x - prev_x))
                       if prev_x is not None else None),
            beta_norm=beta_norm, alpha_max=alpha_max,
            n_constraints_in_master=prev_n_master,
            wall_time_ms=None,
            lower_level=ll,
            lambda_bar=lambda_bar,
            warnings=rec_warnings)
        history.append(rec)

        decided = check_termination(history, opts)
        if decided is not None:
            status = decided
            rec.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            break

        # refinement step: add this iteration's maximizers
        added_any = False
        for sol in ll:
            if disc.add(sol.index, sol.y):
                added_any = True

        improved = feasibility < best_feasibility - 1e-12
        best_feasibility = min(best_feasibility, feasibility)
        if not added_any and not improved:
            stagnant += 1
            if stagnant >= _STAGNATION_LIMIT:
                msg = (f"iteration {k}: no new discretization points and no "
                       "feasibility progress for "
                       f"{_STAGNATION_LIMIT} iterations")
                warnings.append(msg)
                status = "subsolver_failure"
                rec.wall_time_ms = 1e3 * (time.perf_counter() - t0)
                break
        else:
            stagnant = 0

        lin_fields = {}
        if use_linearization:
            for i, sol in enumerate(ll):
                if not sol.regularity.all_ok:
                    flags = sol.regularity
                    msg = (f"iteration {k}: regularity failed for constraint "
                           f"{i} (licq={flags.licq}, "
                           f"strict_complementarity={flags.strict_complementarity}, "
                           f"sosc={flags.sosc}); no linearization this iteration")
                    rec.warnings.append(msg)
                    warnings.append(msg)
                    continue
                try:
                    sens = compute_sensitivity(problem, i, x, sol)
                except SensitivityError as exc:
                    msg = (f"iteration {k}: sensitivity failed for "
                           f"constraint {i}: {exc}")
                    rec.warnings.append(msg)
                    warnings.append(msg)
                    continue
                lc = make_linearized_constraint(problem, i, x, sol, sens)
                rec.linearizations[i] = lc
                lin_fields[i] = linearization_field(lc, problem)

        disc.k += 1
        nlp, tags = _master_problem(problem, disc, lin_fields, x,
                                    opts.trust_radius)
        master = _solve_master(nlp, x, x_start, opts.nlp_options)
        if master.status == "qp_failure":
            msg = f"iteration {k}: master NLP failed ({master.status})"
            warnings.append(msg)
            status = "subsolver_failure"
            rec.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            break
        if master.status == "max_iter":
            msg = (f"iteration {k}: master NLP hit its iteration limit "
                   f"(kkt residual {master.kkt_residual:.3e})")
            rec.warnings.append(msg)
            warnings.append(msg)

        prev_x = x
        x = master.z.copy()
        prev_lambda_bar = _aggregate_multipliers(problem.n_si, tags,
                                                 master.multipliers)
        prev_n_master = len(nlp.constraints)
        rec.wall_time_ms = 1e3 * (time.perf_counter() - t0)

    return RunResult(history=history, final_status=status,
                     final_discretization=disc, warnings=warnings,
                     algorithm=algorithm, problem_name=problem.name)


def run_blankenship_falk(problem: SipProblem, x0=None,
                         d0: Optional[DiscretizationState] = None,
                         opts: Optional[DriverOptions] = None) -> RunResult:
    """Classical adaptive discretization: discretize, solve, refine."""
    opts = opts or DriverOptions()
    if x0 is None:
        x0 = problem.start
    return _run(problem, x0, d0, opts, use_linearization=False,
                algorithm="blankenship_falk")


def run_qcad(problem: SipProblem, x0=None,
             d0: Optional[DiscretizationState] = None,
             opts: Optional[DriverOptions] = None) -> RunResult:
    """Adaptive discretization with linearized lower-level information.

    Per iteration, every regular constraint family contributes a
    linearized Lagrangian constraint to the master in addition to its
    discretization rows, which restores local quadratic convergence.
    """
    opts = opts or DriverOptions()
    if x0 is None:
        x0 = problem.start
    return _run(problem, x0, d0, opts, use_linearization=True,
                algorithm="qcad")
