import numpy as np
import pytest
from scipy.optimize import linprog

from chores_eq.lp import (
    MAX_ORACLE_VARS,
    LpProblem,
    LpStatus,
    brute_force_solve,
    kkt_residuals,
    solve,
)
from chores_eq.gfw import build_subproblem
from chores_eq.market import ChoresInstance
from lp_cases import random_cases


CASES = random_cases(600, seed=20240611)


class TestExamples:
    def test_single_variable(self):
        sol = solve(LpProblem([-1.0], [[1.0]], [1.0]))
        assert sol.ok
        np.testing.assert_allclose(sol.z, [1.0])
        np.testing.assert_allclose(sol.duals_ub, [1.0])
        assert sol.objective == pytest.approx(-1.0)

    def test_fig1_subproblem(self):
        inst = ChoresInstance.ceei([[2.0], [1.0]])
        prob = build_subproblem(inst, np.array([1.0, 2.0]))
        for method in ("primal", "dual", "auto"):
            sol = solve(prob, method=method)
            # z = (beta_1, beta_2, p), frozen from scipy HiGHS
            np.testing.assert_allclose(sol.z, [1.0, 2.0, 2.0], atol=1e-12)
            assert sol.objective == pytest.approx(2.0, abs=1e-12)
            np.testing.assert_allclose(sol.duals_ub, [0.5, 0.5], atol=1e-12)
            np.testing.assert_allclose(sol.duals_eq, [1.0], atol=1e-12)

    def test_fig1_subproblem_matches_oracle(self):
        prob = build_subproblem(ChoresInstance.ceei([[2.0], [1.0]]), np.array([1.0, 2.0]))
        sol, oracle = solve(prob), brute_force_solve(prob)
        np.testing.assert_allclose(sol.z, oracle.z, atol=1e-12)
        np.testing.assert_allclose(sol.duals_ub, oracle.duals_ub, atol=1e-12)

    def test_infeasible(self):
        prob = LpProblem([0.0], [[1.0]], [-1.0])
        assert solve(prob).status is LpStatus.INFEASIBLE
        assert brute_force_solve(prob).status is LpStatus.INFEASIBLE

    def test_unbounded(self):
        prob = LpProblem([-1.0, 0.0], [[0.0, 1.0]], [1.0])
        assert solve(prob).status is LpStatus.UNBOUNDED
        assert brute_force_solve(prob).status is LpStatus.UNBOUNDED

    def test_no_rows(self):
        assert solve(LpProblem([1.0, 2.0])).objective == 0.0
        assert solve(LpProblem([-1.0])).status is LpStatus.UNBOUNDED

    def test_identical_outputs_on_examples(self):
        probs = [
            LpProblem([-1.0], [[1.0]], [1.0]),
            LpProblem([0.0], [[1.0]], [-1.0]),
            build_subproblem(ChoresInstance.ceei([[2.0], [1.0]]), np.array([1.0, 2.0])),
        ]
        for prob in probs:
            a, b = solve(prob), brute_force_solve(prob)
            assert a.status == b.status
            if a.ok:
                assert a.objective == pytest.approx(b.objective, abs=1e-12)


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            LpProblem([1.0, 2.0], [[1.0]], [1.0])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            LpProblem([np.inf])

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            solve(LpProblem([1.0]), method="barrier")

    def test_oracle_guard(self):
        with pytest.raises(ValueError):
            brute_force_solve(LpProblem(np.ones(MAX_ORACLE_VARS + 1)))


class TestRandom:
    @pytest.mark.parametrize("method", ["primal", "dual", "auto"])
    def test_objective_matches_oracle(self, method):
        assert len(CASES) >= 500
        for prob, oracle in CASES:
            sol = solve(prob, method=method)
            assert sol.status == oracle.status
            if sol.ok:
                assert abs(sol.objective - oracle.objective) <= 1e-8 * max(1.0, abs(oracle.objective))

    @pytest.mark.parametrize("method", ["primal", "dual"])
    def test_kkt_invariants(self, method):
        for prob, _ in CASES:
            sol = solve(prob, method=method)
            if not sol.ok:
                continue
            res = kkt_residuals(prob, sol)
            assert res["primal"] <= 1e-9
            assert res["dual"] <= 1e-9
            assert res["complementary"] <= 1e-8
            assert res["gap"] <= 1e-8 * max(1.0, abs(sol.objective))

    def test_matches_scipy(self):
        for prob, _ in CASES[:200]:
            sol = solve(prob)
            ref = linprog(
                prob.c,
                A_ub=prob.A_ub if prob.n_ub else None,
                b_ub=prob.b_ub if prob.n_ub else None,
                A_eq=prob.A_eq if prob.n_eq else None,
                b_eq=prob.b_eq if prob.n_eq else None,
                method="highs",
            )
            assert sol.ok == (ref.status == 0)
            if sol.ok:
                assert sol.objective == pytest.approx(ref.fun, abs=1e-8)

    def test_oracle_duals_are_optimal(self):
        for prob, oracle in CASES[:200]:
            if oracle.ok:
                res = kkt_residuals(prob, oracle)
                assert max(res.values()) <= 1e-8

    def test_deterministic(self):
        for prob, _ in CASES[:100]:
            a, b = solve(prob), solve(prob)
            assert a.status == b.status
            if a.ok:
                assert a.z.tobytes() == b.z.tobytes()
                assert a.duals_ub.tobytes() == b.duals_ub.tobytes()
                assert a.basis == b.basis


class TestWarmStart:
    def test_warm_start_agrees_with_cold(self):
        rng = np.random.default_rng(7)
        inst = ChoresInstance.ceei(rng.uniform(0.1, 1.0, (6, 6)))
        beta = np.ones(6)
        prev = None
        for _ in range(4):
            prob = build_subproblem(inst, beta)
            warm = solve(prob, warm=prev)
            cold = solve(prob)
            assert warm.objective == pytest.approx(cold.objective, rel=1e-10)
            beta = warm.z[:6]
            prev = warm

    def test_warm_start_saves_pivots(self):
        rng = np.random.default_rng(8)
        inst = ChoresInstance.ceei(rng.uniform(0.1, 1.0, (8, 8)))
        first = solve(build_subproblem(inst, np.ones(8)))
        beta = first.z[:8]
        prob = build_subproblem(inst, beta)
        assert solve(prob, warm=first).iterations <= solve(prob).iterations


def test_dump_lists_every_row():
    prob = LpProblem([1.0, -2.0], [[1.0, 1.0]], [3.0], [[1.0, 0.0]], [1.0])
    text = prob.dump()
    assert text.splitlines()[0].startswith("min")
    assert "ub0:" in text and "eq0:" in text
    assert len(text.splitlines()) == 4
