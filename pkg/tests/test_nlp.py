import itertools

import numpy as np
import pytest

from sipsolve.model import ScalarField
from sipsolve.nlp import NlpOptions, NlpProblem, solve_nlp, solve_qp


# ---------------------------------------------------------------------------
# Quadratic subproblems
# ---------------------------------------------------------------------------

class TestSolveQp:
    def test_unconstrained_minimum(self):
        r = solve_qp(np.eye(2), np.array([-1.0, 0.0]), np.zeros((0, 2)),
                     np.zeros(0))
        assert r.status == "optimal"
        assert np.allclose(r.step, [1.0, 0.0], atol=1e-12)

    def test_single_active_row(self):
        # min 0.5 d'd - 2 d1 s.t. d1 <= 0.5
        r = solve_qp(np.eye(2), np.array([-2.0, 0.0]),
                     np.array([[1.0, 0.0]]), np.array([0.5]))
        assert r.status == "optimal"
        assert np.allclose(r.step, [0.5, 0.0], atol=1e-12)
        assert r.multipliers == pytest.approx([1.5], abs=1e-12)

    def test_inconsistent_rows(self):
        r = solve_qp(np.eye(2), np.zeros(2),
                     np.array([[1.0, 0.0], [-1.0, 0.0]]),
                     np.array([-1.0, -1.0]))
        assert r.status == "infeasible"

    def test_bounds_become_active(self):
        r = solve_qp(np.eye(1), np.array([-3.0]), np.zeros((0, 1)),
                     np.zeros(0), lower=np.array([-1.0]), upper=np.array([1.0]))
        assert r.status == "optimal"
        assert r.step == pytest.approx([1.0])
        assert r.upper_multipliers == pytest.approx([2.0])

    def test_inactive_rows_get_zero_multiplier(self):
        r = solve_qp(np.eye(2), np.array([-1.0, 0.0]),
                     np.array([[1.0, 0.0]]), np.array([5.0]))
        assert r.status == "optimal"
        assert r.multipliers == pytest.approx([0.0])


def _qp_oracle(H, g, A, b, lower, upper):
    """Enumerate active sets of a strictly convex QP with bound rows folded in.

    Returns (d, feasible). Small dimensions only.
    """
    d = len(g)
    rows = [A[k] for k in range(len(b))]
    rhs = list(b)
    for j in range(d):
        e = np.zeros(d)
        e[j] = -1.0
        rows.append(e)
        rhs.append(-lower[j])
        rows.append(-e)
        rhs.append(upper[j])
    rows = np.array(rows)
    rhs = np.array(rhs)
    nrows = len(rhs)

    best = None
    for size in range(d + 1):
        for combo in itertools.combinations(range(nrows), size):
            Aw = rows[list(combo)]
            kkt = np.block([[H, Aw.T], [Aw, np.zeros((size, size))]])
            rhs_w = np.concatenate([-g, rhs[list(combo)]])
            try:
                sol = np.linalg.solve(kkt, rhs_w)
            except np.linalg.LinAlgError:
                continue
            step, mult = sol[:d], sol[d:]
            if np.any(mult < -1e-10):
                continue
            if np.any(rows @ step - rhs > 1e-9):
                continue
            val = 0.5 * step @ H @ step + g @ step
            if best is None or val < best[1] - 1e-12:
                best = (step, val)
    if best is None:
        return None, False
    return best[0], True


class TestQpAgainstEnumeration:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_random_strictly_convex_qps(self, dim):
        rng = np.random.default_rng(5 + dim)
        for trial in range(40):
            M = rng.normal(size=(dim, dim))
            H = M @ M.T + dim * np.eye(dim)
            g = rng.normal(size=dim)
            nrows = rng.integers(0, 4)
            A = rng.normal(size=(nrows, dim))
            b = rng.normal(size=nrows)
            lower = -2.0 * np.ones(dim)
            upper = 2.0 * np.ones(dim)

            expect, feasible = _qp_oracle(H, g, A, b, lower, upper)
            r = solve_qp(H, g, A, b, lower=lower, upper=upper)
            if not feasible:
                assert r.status == "infeasible", trial
                continue
            assert r.status == "optimal", (trial, r.status)
            val = 0.5 * r.step @ H @ r.step + g @ r.step
            val_ref = 0.5 * expect @ H @ expect + g @ expect
            assert val <= val_ref + 1e-8, trial
            assert np.allclose(r.step, expect, atol=1e-6), trial

    def test_oracle_detects_infeasible(self):
        _, feasible = _qp_oracle(np.eye(1), np.zeros(1),
                                 np.array([[1.0]]), np.array([-5.0]),
                                 np.array([-2.0]), np.array([2.0]))
        assert not feasible


# ---------------------------------------------------------------------------
# Nonlinear subsolver
# ---------------------------------------------------------------------------

def _linear_objective():
    return ScalarField(2, lambda x: -x[0] + 1.5 * x[1],
                       lambda x: np.array([-1.0, 1.5]),
                       hessian=lambda x: np.zeros((2, 2)))


def _quadratic_objective():
    return ScalarField(2, lambda x: x[0] ** 2 + x[1] ** 2,
                       lambda x: 2.0 * x, hessian=lambda x: 2.0 * np.eye(2))


class TestSolveNlp:
    def test_box_lp(self):
        p = NlpProblem(2, _linear_objective(),
                       lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
        sol = solve_nlp(p, np.zeros(2))
        assert sol.converged
        assert np.allclose(sol.z, [1.0, -1.0], atol=1e-9)

    def test_unconstrained_quadratic(self):
        p = NlpProblem(2, _quadratic_objective())
        sol = solve_nlp(p, np.array([3.0, 4.0]))
        assert sol.converged
        assert np.allclose(sol.z, [0.0, 0.0], atol=1e-9)
        assert sol.objective_value == pytest.approx(0.0, abs=1e-12)

    def test_single_nonbinding_direction(self):
        # -1 + 2 x1 - x2 <= 0 pushes the LP optimum to (0, -1)
        row = ScalarField(2, lambda x: -1.0 + 2.0 * x[0] - x[1],
                          lambda x: np.array([2.0, -1.0]),
                          hessian=lambda x: np.zeros((2, 2)))
        p = NlpProblem(2, _linear_objective(), constraints=(row,),
                       lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
        sol = solve_nlp(p, np.zeros(2))
        assert sol.converged
        assert np.allclose(sol.z, [0.0, -1.0], atol=1e-8)

    def test_kkt_invariants_recomputed(self):
        row = ScalarField(2, lambda x: -1.0 + 2.0 * x[0] - x[1],
                          lambda x: np.array([2.0, -1.0]),
                          hessian=lambda x: np.zeros((2, 2)))
        p = NlpProblem(2, _linear_objective(), constraints=(row,),
                       lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
        sol = solve_nlp(p, np.zeros(2))
        assert sol.converged

        lag = p.objective.gradient(sol.z).copy()
        lag += sol.multipliers[0] * row.gradient(sol.z)
        lag -= sol.lower_multipliers
        lag += sol.upper_multipliers
        assert np.abs(lag).max() <= 1e-8

        # primal feasibility and complementarity from returned data
        assert row.value(sol.z) <= 1e-9
        assert sol.multipliers.min() >= -1e-12
        assert abs(sol.multipliers[0] * row.value(sol.z)) <= 1e-8
        assert np.all(sol.lower_multipliers * (sol.z - p.lower) <= 1e-8)
        assert np.all(sol.upper_multipliers * (p.upper - sol.z) <= 1e-8)
        assert sol.kkt_residual <= 1e-9
        assert sol.max_violation <= 1e-9

    def test_start_outside_box_is_clipped(self):
        p = NlpProblem(2, _quadratic_objective(),
                       lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
        sol = solve_nlp(p, np.array([50.0, -50.0]))
        assert sol.converged
        assert np.allclose(sol.z, [0.0, 0.0], atol=1e-9)

    def test_deterministic(self):
        row = ScalarField(2, lambda x: x[0] ** 2 + x[1] ** 2 - 0.5,
                          lambda x: 2.0 * x, hessian=lambda x: 2.0 * np.eye(2))
        p = NlpProblem(2, _linear_objective(), constraints=(row,),
                       lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
        a = solve_nlp(p, np.array([0.1, 0.1]))
        b = solve_nlp(p, np.array([0.1, 0.1]))
        assert np.array_equal(a.z, b.z)
        assert a.merit_history == b.merit_history

    def test_infeasible_rows_yield_elastic_compromise(self):
        left = ScalarField(1, lambda x: x[0] + 1.0, lambda x: np.ones(1),
                           hessian=lambda x: np.zeros((1, 1)))
        right = ScalarField(1, lambda x: 1.0 - x[0], lambda x: -np.ones(1),
                            hessian=lambda x: np.zeros((1, 1)))
        obj = ScalarField(1, lambda x: x[0] ** 2, lambda x: 2.0 * x,
                          hessian=lambda x: 2.0 * np.eye(1))
        p = NlpProblem(1, obj, constraints=(left, right),
                       lower=np.array([-2.0]), upper=np.array([2.0]))
        sol = solve_nlp(p, np.zeros(1))
        assert not sol.converged
        assert sol.max_violation > 0.5

    def test_nonlinear_constraint_curvature(self):
        # min -x1 + 1.5 x2 on the disk x1^2 + x2^2 <= 0.5
        row = ScalarField(2, lambda x: x[0] ** 2 + x[1] ** 2 - 0.5,
                          lambda x: 2.0 * x, hessian=lambda x: 2.0 * np.eye(2))
        p = NlpProblem(2, _linear_objective(), constraints=(row,))
        sol = solve_nlp(p, np.array([0.1, 0.1]))
        assert sol.converged
        r = np.sqrt(0.5)
        direction = np.array([-1.0, 1.5]) / np.sqrt(1.0 + 1.5 ** 2)
        assert np.allclose(sol.z, -r * direction, atol=1e-7)

    def test_respects_iteration_budget(self):
        p = NlpProblem(2, _quadratic_objective())
        sol = solve_nlp(p, np.array([3.0, 4.0]), NlpOptions(max_iter=1))
        assert sol.iterations <= 1
