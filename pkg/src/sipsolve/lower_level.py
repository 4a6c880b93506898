"""Global solution of the lower-level problems max_y g_i(x, y) s.t. v(y) <= 0.

Strategy: evaluate g_i on a uniform grid over a bounding box of the index
set, refine the best feasible nodes with the local SQP solver, then polish
the winner with Newton steps on the active-set KKT system (exact second
derivatives are available, so the polished point carries KKT residuals near
machine precision -- the sensitivity computations downstream need that).

The bounding box is read off the index constraints when they are recognized
as interval bounds (affine with a +/- unit-vector gradient); otherwise a
coarse scan of a large box locates the feasible hull, which is then padded.

Deterministic by construction: fixed grid order, ties broken toward the
lexicographically smallest maximizer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ScalarField, SipProblem, negated, restrict_to_y
from .nlp import NlpOptions, NlpProblem, solve_nlp

Array = np.ndarray

_LICQ_SVD_CUTOFF = 1e-8
_SOSC_EIG_CUTOFF = 1e-8
_STRICT_COMP_TOL = 1e-6


class LowerLevelError(RuntimeError):
    """The lower-level problem could not be solved (e.g. empty index set)."""


@dataclass(frozen=True)
class LlOptions:
    grid_per_dim: int = 64
    n_starts: int = 8
    tol_feas: float = 1e-9
    tol_kkt: float = 1e-9
    tol_act: float = 1e-7
    dedup_spacing: float = 1e-3
    tie_tol: float = 1e-9
    scan_per_dim: int = 129
    scan_half_width: float = 10.0


@dataclass(frozen=True)
class RegularityFlags:
    licq: bool
    strict_complementarity: bool
    sosc: bool

    @property
    def all_ok(self) -> bool:
        return self.licq and self.strict_complementarity and self.sosc


@dataclass
class LowerLevelSolution:
    """Global maximizer of g_i(x, .) over the index set, with KKT data."""

    index: int
    x: Array
    y: Array
    multipliers: Array
    value: float
    active_set: tuple
    kkt_residual: float
    regularity: RegularityFlags
    local_maxima: list          # [(y, value)] of distinct local solutions
    multiple_global: bool       # value tie within tie_tol among distinct maxima


def index_set_box(problem: SipProblem, opts: Optional[LlOptions] = None):
    """Bounding box of the index set: (box (m, 2), recognized_exact flag)."""
    opts = opts or LlOptions()
    m = problem.m
    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    recognized = True
    probes = [np.zeros(m), np.full(m, 0.37)]
    for v in problem.index_constraints:
        grads = [v.gradient(p) for p in probes]
        hess = v.hessian(probes[0])
        affine = (np.abs(hess).max() <= 1e-12
                  and np.abs(grads[0] - grads[1]).max() <= 1e-12)
        grad = grads[0]
        nonzero = np.flatnonzero(np.abs(grad) > 1e-12)
        if not (affine and len(nonzero) == 1):
            recognized = False
            break
        j = int(nonzero[0])
        a = grad[j]
        c = v.value(probes[0]) - a * probes[0][j]
        if a > 0:
            hi[j] = min(hi[j], -c / a)
        else:
            lo[j] = max(lo[j], -c / a)
    if recognized and np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) \
            and np.all(lo <= hi):
        return np.stack([lo, hi], axis=1), True

    # scan a large box for the feasible hull
    width = opts.scan_half_width
    axis = np.linspace(-width, width, opts.scan_per_dim)
    grids = np.meshgrid(*([axis] * m), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    feasible = np.ones(len(nodes), dtype=bool)
    for v in problem.index_constraints:
        feasible &= v.value_batch(nodes) <= 1e-9
    if not feasible.any():
        raise LowerLevelError(
            "no feasible point of the index set in the scan box "
            f"[-{width}, {width}]^{m}")
    pts = nodes[feasible]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = np.maximum(0.05 * (hi - lo), 1e-6)
    lo = np.maximum(lo - pad, -width)
    hi = np.minimum(hi + pad, width)
    return np.stack([lo, hi], axis=1), False


def _grid_nodes(box: Array, per_dim: int):
    axes = [np.linspace(box[j, 0], box[j, 1], per_dim) for j in range(len(box))]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _lagrangian_hessian(problem: SipProblem, i: int, x: Array, y: Array,
                        mu: Array) -> Array:
    n = problem.n
    z = np.concatenate([x, y])
    h = problem.si_constraints[i].hessian(z)[n:, n:].copy()
    for l, v in enumerate(problem.index_constraints):
        if mu[l] != 0.0:
            h -= mu[l] * v.hessian(y)
    return h


def _polish_kkt(problem: SipProblem, i: int, x: Array, y: Array, mu: Array,
                active: list, opts: LlOptions):
    """Newton iterations on the active-set KKT system; None when unusable."""
    n, m = problem.n, problem.m
    g = problem.si_constraints[i]
    vs = problem.index_constraints
    y = y.copy()
    mu_a = np.array([mu[l] for l in active], dtype=float)

    def residual(y_cur, mu_cur):
        grad_y = g.gradient(np.concatenate([x, y_cur]))[n:]
        for l, mul in zip(active, mu_cur):
            grad_y = grad_y - mul * vs[l].gradient(y_cur)
        vals = np.array([vs[l].value(y_cur) for l in active])
        return np.concatenate([grad_y, vals])

    res = residual(y, mu_a)
    best = (np.linalg.norm(res), y.copy(), mu_a.copy())
    for _ in range(8):
        if np.linalg.norm(res) <= 1e-13 * (1.0 + np.linalg.norm(res)):
            break
        mu_full = np.zeros(len(vs))
        for l, mul in zip(active, mu_a):
            mu_full[l] = mul
        h = _lagrangian_hessian(problem, i, x, y, mu_full)
        a = len(active)
        kkt = np.zeros((m + a, m + a))
        kkt[:m, :m] = h
        if a:
            va = np.stack([vs[l].gradient(y) for l in active])
            kkt[:m, m:] = -va.T
            kkt[m:, :m] = va
        try:
            delta = np.linalg.solve(kkt, -res)
        except np.linalg.LinAlgError:
            return None
        y = y + delta[:m]
        mu_a = mu_a + delta[m:]
        res = residual(y, mu_a)
        norm = np.linalg.norm(res)
        if norm < best[0]:
            best = (norm, y.copy(), mu_a.copy())
        if norm <= 1e-13:
            break
    norm, y, mu_a = best
    if norm > 1e-10:
        return None
    if any(mu_a < -1e-10):
        return None
    # the polished point must still satisfy the inactive constraints
    for l, v in enumerate(vs):
        if l not in active and v.value(y) > opts.tol_feas:
            return None
    mu_out = np.zeros(len(vs))
    for l, mul in zip(active, mu_a):
        mu_out[l] = max(mul, 0.0)
    return y, mu_out


def _kkt_residual(problem: SipProblem, i: int, x: Array, y: Array, mu: Array) -> float:
    n = problem.n
    grad_y = problem.si_constraints[i].gradient(np.concatenate([x, y]))[n:]
    for l, v in enumerate(problem.index_constraints):
        if mu[l] != 0.0:
            grad_y = grad_y - mu[l] * v.gradient(y)
    return float(np.linalg.norm(grad_y))


def check_regularity(problem: SipProblem, i: int,
                     sol: "LowerLevelSolution") -> RegularityFlags:
    """LICQ, strict complementarity, and second-order sufficiency at sol.

    SOSC is tested for the maximization: the Lagrangian Hessian projected
    onto the null space of the strongly active constraint gradients must be
    negative definite (min eigenvalue of the sign-flipped projection >= 1e-8).
    """
    y, mu = sol.y, sol.multipliers
    vs = problem.index_constraints
    active = list(sol.active_set)

    licq = True
    if active:
        va = np.stack([vs[l].gradient(y) for l in active])
        svals = np.linalg.svd(va, compute_uv=False)
        licq = bool(len(active) <= len(y) and svals.min(initial=np.inf) >= _LICQ_SVD_CUTOFF)

    strict = all(mu[l] >= _STRICT_COMP_TOL for l in active)

    strong = [l for l in active if mu[l] > _STRICT_COMP_TOL]
    if strong:
        vs_strong = np.stack([vs[l].gradient(y) for l in strong])
        _, svals, vt = np.linalg.svd(vs_strong)
        rank = int((svals >= _LICQ_SVD_CUTOFF * max(svals.max(), 1.0)).sum())
        null_basis = vt[rank:].T
    else:
        null_basis = np.eye(len(y))
    if null_basis.shape[1] == 0:
        sosc = True
    else:
        h = _lagrangian_hessian(problem, i, sol.x, y, mu)
        projected = -(null_basis.T @ h @ null_basis)
        sosc = bool(np.linalg.eigvalsh(projected)[0] >= _SOSC_EIG_CUTOFF)
    return RegularityFlags(licq, strict, sosc)


def solve_lower_level_global(problem: SipProblem, i: int, x,
                             opts: Optional[LlOptions] = None) -> LowerLevelSolution:
    """Grid multistart with local refinement; value dominates the grid.

    Guarantee: the returned value is >= the best value over the feasible
    grid nodes (up to 1e-12).  Value ties within ``tie_tol`` among distinct
    local maxima are flagged via ``multiple_global``.
    """
    opts = opts or LlOptions()
    x = np.asarray(x, dtype=float)
    n, m = problem.n, problem.m
    g = problem.si_constraints[i]
    vs = problem.index_constraints

    box, recognized = index_set_box(problem, opts)
    nodes = _grid_nodes(box, opts.grid_per_dim)
    feasible = np.ones(len(nodes), dtype=bool)
    for v in vs:
        feasible &= v.value_batch(nodes) <= max(opts.tol_feas, 1e-10)
    if not feasible.any():
        raise LowerLevelError(
            f"lower level {i}: no feasible grid node (empty or degenerate index set)")
    feas_idx = np.flatnonzero(feasible)
    g_y = restrict_to_y(g, n, x)
    values = g_y.value_batch(nodes[feas_idx])

    order = np.lexsort((feas_idx, -values))   # by value desc, then grid order
    starts = []
    for k in order:
        node = nodes[feas_idx[k]]
        if all(np.linalg.norm(node - s) >= opts.dedup_spacing for s in starts):
            starts.append(node)
        if len(starts) >= opts.n_starts:
            break
    grid_best = float(values.max())

    width = box[:, 1] - box[:, 0]
    nlp_lo = box[:, 0] - 0.05 * width
    nlp_hi = box[:, 1] + 0.05 * width
    local = NlpProblem(m, negated(g_y), vs, nlp_lo, nlp_hi)
    nlp_opts = NlpOptions(tol_kkt=opts.tol_kkt, tol_feas=opts.tol_feas,
                          tol_comp=opts.tol_kkt, max_iter=60)

    candidates = []   # (value, y, mu)
    for start in starts:
        sol = solve_nlp(local, start, nlp_opts)
        y_loc = sol.z
        feas = max((v.value(y_loc) for v in vs), default=0.0)
        if feas > 10 * opts.tol_feas:
            continue
        mu = sol.multipliers.copy()
        active = [l for l, v in enumerate(vs) if v.value(y_loc) >= -opts.tol_act]
        polished = _polish_kkt(problem, i, x, y_loc, mu, active, opts)
        if polished is None and active:
            # retry without weakly-active rows picked up by the tolerance
            strong = [l for l in active if mu[l] > _STRICT_COMP_TOL]
            if strong != active:
                polished = _polish_kkt(problem, i, x, y_loc, mu, strong, opts)
        if polished is not None:
            y_loc, mu = polished
        else:
            mu = np.where([v.value(y_loc) >= -opts.tol_act for v in vs], mu, 0.0)
        candidates.append((float(g_y.value(y_loc)), y_loc, mu))

    if not candidates:
        raise LowerLevelError(
            f"lower level {i}: all local refinements failed from the grid starts")

    # cluster distinct maxima (keep the best value per cluster)
    candidates.sort(key=lambda c: (-c[0], tuple(c[1])))
    clusters = []
    for value, y_loc, mu in candidates:
        if all(np.linalg.norm(y_loc - c[1]) >= 1e-6 for c in clusters):
            clusters.append((value, y_loc, mu))

    best_value = clusters[0][0]
    if best_value < grid_best - 1e-12:
        raise LowerLevelError(
            f"lower level {i}: refinement lost the grid optimum "
            f"({best_value} < {grid_best})")
    tied = [c for c in clusters if c[0] >= best_value - opts.tie_tol]
    winner = min(tied, key=lambda c: tuple(c[1]))
    value, y_star, mu = winner

    active = tuple(l for l, v in enumerate(vs) if v.value(y_star) >= -opts.tol_act)
    mu = np.array([mu[l] if l in active else 0.0 for l in range(len(vs))])
    sol = LowerLevelSolution(
        index=i, x=x.copy(), y=y_star, multipliers=mu, value=value,
        active_set=active,
        kkt_residual=_kkt_residual(problem, i, x, y_star, mu),
        regularity=RegularityFlags(False, False, False),
        local_maxima=[(c[1], c[0]) for c in clusters],
        multiple_global=len(tied) > 1,
    )
    sol.regularity = check_regularity(problem, i, sol)
    return sol


def solve_all_lower_levels(problem: SipProblem, x,
                           opts: Optional[LlOptions] = None) -> list:
    """One global lower-level solve per semi-infinite constraint."""
    return [solve_lower_level_global(problem, i, x, opts)
            for i in range(problem.n_si)]
