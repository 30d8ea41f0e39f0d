import csv
import io
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from chores_eq.certify import certify_ce, check_kkt_redundant, kkt_duality_gap
from chores_eq.gfw import (
    IDENTITY_TOL,
    TRACE_COLUMNS,
    GfwConfig,
    GfwInvariantError,
    appendix_a_checks,
    build_subproblem,
    initial_point,
    iteration_bound,
    normalize_allocation,
    run,
    trace_csv,
    write_trace_csv,
)
from chores_eq.instances import (
    GenSpec,
    appendix_b,
    appendix_b_beta,
    appendix_b_equilibrium,
    fig1,
    fig2,
    generate,
)
from chores_eq.lp import solve
from chores_eq.market import ChoresInstance, MarketError, dual_objective_upper_bound, induced_beta


class TestInitialPoint:
    def test_fig1(self):
        y = initial_point(fig1())
        np.testing.assert_array_equal(y.prices, [2.0])
        np.testing.assert_array_equal(y.beta, [1.0, 2.0])

    def test_single_agent(self):
        y = initial_point(ChoresInstance.ceei([[1.0, 1.0]]))
        np.testing.assert_array_equal(y.prices, [0.5, 0.5])
        np.testing.assert_array_equal(y.beta, [0.5])

    def test_appendix_b(self):
        y = initial_point(appendix_b())
        np.testing.assert_array_equal(y.prices, [1.0, 1.0])
        np.testing.assert_allclose(y.beta, [1.0, 1 / 0.99], rtol=1e-15)

    def test_feasible(self):
        inst = generate(GenSpec(n=7, m=4, dist="lognormal", seed=2))
        assert initial_point(inst).is_feasible(inst)


class TestSubproblem:
    def test_one_by_one(self):
        sol = solve(build_subproblem(ChoresInstance.ceei([[1.0]]), [1.0]))
        np.testing.assert_allclose(sol.z, [1.0, 1.0])

    def test_fig1(self):
        sol = solve(build_subproblem(fig1(), [1.0, 2.0]))
        np.testing.assert_allclose(sol.z[:2], [1.0, 2.0], atol=1e-12)

    def test_appendix_b_reaches_equilibrium_beta(self):
        inst = appendix_b()
        sol = solve(build_subproblem(inst, initial_point(inst).beta))
        # frozen from the brute-force oracle
        np.testing.assert_allclose(sol.z[:2], [0.019801980198019802, 1.9605920988138417], rtol=1e-12)
        np.testing.assert_allclose(sol.z[:2], appendix_b_beta(), rtol=1e-12)
        np.testing.assert_allclose(sol.z[2:], [2 / 101, 200 / 101], rtol=1e-12)

    def test_row_layout(self):
        prob = build_subproblem(appendix_b(), [1.0, 2.0])
        np.testing.assert_array_equal(prob.c, [1.0, 0.5, 0.0, 0.0])
        # row i*m + j is p_j - d_ij beta_i <= 0
        np.testing.assert_array_equal(prob.A_ub[1], [-100.0, 0.0, 0.0, 1.0])
        np.testing.assert_array_equal(prob.A_ub[2], [0.0, -0.99, 1.0, 0.0])
        np.testing.assert_array_equal(prob.A_eq, [[0.0, 0.0, 1.0, 1.0]])
        np.testing.assert_array_equal(prob.b_eq, [2.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scipy(self, seed):
        inst = generate(GenSpec(n=5, m=4, dist="exponential", seed=seed))
        beta_prev = np.random.default_rng(seed).uniform(0.5, 2.0, 5)
        prob = build_subproblem(inst, beta_prev)
        ref = linprog(prob.c, A_ub=prob.A_ub, b_ub=prob.b_ub, A_eq=prob.A_eq, b_eq=prob.b_eq, method="highs")
        sol = solve(prob)
        assert sol.objective == pytest.approx(ref.fun, rel=1e-10)
        np.testing.assert_allclose(sol.duals_ub, -ref.ineqlin.marginals, atol=1e-9)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(MarketError):
            build_subproblem(fig1(), [1.0, 0.0])


class TestRunFixtures:
    def test_fig1(self):
        res = run(fig1())
        assert res.status == "exact_kkt"
        assert res.iters <= 2
        np.testing.assert_allclose(res.final.y.beta, [1.0, 2.0], atol=1e-9)
        np.testing.assert_allclose(res.final.y.prices, [2.0], atol=1e-9)
        np.testing.assert_allclose(res.candidate.allocation, [[0.5], [0.5]], atol=1e-9)
        assert abs(res.witness.mu) <= 1e-12

    def test_appendix_b(self):
        inst = appendix_b()
        res = run(inst)
        assert res.status == "exact_kkt"
        ref = appendix_b_equilibrium()
        np.testing.assert_allclose(res.candidate.prices, ref.prices, atol=1e-9)
        np.testing.assert_allclose(res.candidate.allocation, ref.allocation, atol=1e-9)
        assert certify_ce(inst, res.candidate).max_eps <= 1e-12

    def test_appendix_b_first_step_columns(self):
        inst = appendix_b()
        res = run(inst)
        step = res.trace[1]
        np.testing.assert_allclose(step.x_bar.sum(axis=0), [1.0, 1.0], atol=1e-9)

    def test_fig2(self):
        res = run(fig2(), GfwConfig(check_invariants=True))
        assert res.status == "exact_kkt"
        objs = [it.objective for it in res.trace]
        assert all(b > a for a, b in zip(objs[:-1], objs[1:-1]))
        assert certify_ce(fig2(), res.candidate).is_exact()

    def test_single_agent(self):
        res = run(ChoresInstance.ceei([[1.0, 3.0, 2.0]]))
        assert res.status == "exact_kkt"
        assert certify_ce(ChoresInstance.ceei([[1.0, 3.0, 2.0]]), res.candidate).is_exact()

    def test_general_budgets(self):
        inst = ChoresInstance(generate(GenSpec(n=6, dist="lognormal", seed=4)).d, np.array([1, 2, 3, 1, 1, 0.5]))
        res = run(inst, GfwConfig(check_invariants=True))
        assert res.status == "exact_kkt"
        assert certify_ce(inst, res.candidate).is_exact()
        assert check_kkt_redundant(inst, res.witness).passed


class TestRunProperties:
    @pytest.mark.parametrize("dist", ["uniform01", "lognormal", "truncnormal", "exponential", "randint"])
    @pytest.mark.parametrize("seed", range(4))
    def test_random_runs(self, dist, seed):
        inst = generate(GenSpec(n=8, dist=dist, seed=seed))
        res = run(inst, GfwConfig(check_invariants=True))
        assert res.status == "exact_kkt"
        assert certify_ce(inst, res.candidate).is_exact()
        assert check_kkt_redundant(inst, res.witness).passed
        assert kkt_duality_gap(inst, res.witness) <= 1e-6
        bound = dual_objective_upper_bound(inst)
        objs = [it.objective for it in res.trace]
        assert all(b - a >= -1e-9 for a, b in zip(objs, objs[1:]))
        assert all(o + inst.total_budget <= bound + 1e-8 for o in objs)
        assert all(it.min_price > 0 for it in res.trace)
        total_is = sum(it.d_is for it in res.trace[1:]) * inst.b.min()
        assert total_is <= res.final.objective - res.initial.objective + 1e-8

    def test_eps_target_stops_early(self):
        inst = generate(GenSpec(n=10, seed=1))
        res = run(inst, GfwConfig(eps_target=0.05))
        assert res.status == "eps_reached"
        assert res.final.eps_estimate <= 0.05
        assert res.witness is None

    def test_eps_target_continue(self):
        inst = generate(GenSpec(n=10, seed=1))
        res = run(inst, GfwConfig(eps_target=0.05, stop_on_eps=False))
        assert res.status == "exact_kkt"
        assert res.first_eps_iter is not None and res.first_eps_iter <= res.iters

    def test_iteration_cap(self):
        res = run(generate(GenSpec(n=10, seed=1)), GfwConfig(max_iters=1))
        assert res.status == "iter_cap"
        assert res.iters == 1

    def test_deterministic(self):
        inst = generate(GenSpec(n=10, dist="randint", seed=5))
        a, b = run(inst), run(inst)
        assert a.iters == b.iters
        assert a.candidate.prices.tobytes() == b.candidate.prices.tobytes()

    def test_warm_and_cold_agree(self):
        inst = generate(GenSpec(n=10, dist="lognormal", seed=3))
        a = run(inst, GfwConfig(warm_start=True))
        b = run(inst, GfwConfig(warm_start=False))
        np.testing.assert_allclose(a.candidate.prices, b.candidate.prices, rtol=1e-8)

    def test_trace_every(self):
        inst = generate(GenSpec(n=10, seed=2))
        full = run(inst)
        sparse = run(inst, GfwConfig(trace_every=3))
        assert all(it.t % 3 == 0 or it is sparse.final for it in sparse.trace[1:])
        assert sparse.final.objective == full.final.objective


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [{"term_tol": 0.0}, {"max_iters": 0}, {"eps_target": 1.0}, {"trace_every": 0}]
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            GfwConfig(**kwargs)

    def test_default_cap(self):
        assert GfwConfig().iteration_cap(fig1()) == 10_000


class TestNormalize:
    def test_unit_ratio_is_identity(self):
        x = np.array([[0.2, 0.7], [0.8, 0.3]])
        np.testing.assert_array_equal(normalize_allocation(appendix_b(), x, [1.0, 1.0]), x)

    def test_constant_ratio(self):
        r = 1.3
        x = np.full((2, 2), r / 2)
        np.testing.assert_allclose(normalize_allocation(appendix_b(), x, [r, r]).sum(axis=0), [1.0, 1.0])

    def test_rejects_nonpositive(self):
        with pytest.raises(MarketError):
            normalize_allocation(appendix_b(), np.ones((2, 2)), [1.0, 0.0])


class TestAppendixA:
    def test_stationary_vacuous(self):
        it = run(fig1()).trace[0]
        assert all(v == 0.0 for _, v in appendix_a_checks(fig1(), it, it))

    def test_fig1_first_step(self):
        inst = appendix_b()
        res = run(inst)
        checks = dict(appendix_a_checks(inst, res.trace[0], res.trace[1]))
        assert checks["disutility"] <= 1e-9

    def test_uniform_10x10(self):
        inst = generate(GenSpec(n=10, seed=0))
        res = run(inst)
        assert len(res.trace) > 2
        for prev, cur in zip(res.trace, res.trace[1:]):
            for name, value in appendix_a_checks(inst, prev, cur):
                assert value <= IDENTITY_TOL, (cur.t, name, value)

    def test_corrupted_iterate_detected(self):
        inst = generate(GenSpec(n=5, seed=0))
        res = run(inst)
        prev, cur = res.trace[0], res.trace[1]
        bad = type(cur)(**{**cur.__dict__, "x": cur.x * 1.01})
        checks = dict(appendix_a_checks(inst, prev, bad))
        assert checks["disutility"] > IDENTITY_TOL


class TestIterationBound:
    def test_large_ceei(self):
        # 50-digit mpmath evaluation of the bound formula
        inst = ChoresInstance.ceei(np.ones((50, 50)))
        assert iteration_bound(inst, 0.01) == 5_869_105

    def test_eps_one(self):
        assert iteration_bound(ChoresInstance.ceei([[math.e]]), 1.0) == 9

    @pytest.mark.parametrize("eps", [0.0, -0.1, 1.5, math.nan])
    def test_range(self, eps):
        with pytest.raises(ValueError):
            iteration_bound(fig1(), eps)

    def test_negative_when_disutilities_tiny(self):
        inst = ChoresInstance.ceei([[0.1, 0.2], [0.3, 0.4]])
        assert iteration_bound(inst, 0.01) < 0

    def test_cap_uses_bound(self):
        inst = generate(GenSpec(n=3, dist="randint", seed=0))
        assert GfwConfig(eps_target=0.01).iteration_cap(inst) == 10 * iteration_bound(inst, 0.01)


class TestInvariants:
    def test_check_raises_on_bad_bound(self, monkeypatch):
        import chores_eq.gfw as gfw

        monkeypatch.setattr(gfw, "dual_objective_upper_bound", lambda inst: -1e9)
        with pytest.raises(GfwInvariantError):
            run(generate(GenSpec(n=4, seed=0)), GfwConfig(check_invariants=True))


def _link_cases():
    for dist in ("uniform01", "exponential"):
        for n, seeds in ((10, range(6)), (25, range(4, 7))):
            for seed in seeds:
                yield dist, n, seed


LINK_LEVELS = (0.01, 0.02, 0.05, 0.1, 0.2)


class TestEpsilonLink:
    @pytest.mark.parametrize("dist,n,seed", list(_link_cases()))
    def test_estimate_implies_strongly_approximate(self, dist, n, seed):
        """eps_estimate <= eps at t means (p^t, x_bar^t) is eps-strongly approximate."""
        res = run(generate(GenSpec(n=n, dist=dist, seed=seed)))
        for it in res.trace[1:]:
            for eps in LINK_LEVELS:
                if it.eps_estimate <= eps:
                    assert it.cert.is_strongly_approx(eps), (it.t, eps, it.eps_estimate, it.cert)

    @pytest.mark.parametrize("dist,n,seed", list(_link_cases()))
    def test_earning_within_ratio_bound(self, dist, n, seed):
        """Earnings are b_i r_i / rho, so the earning error is at most 2e / (1 + e)."""
        res = run(generate(GenSpec(n=n, dist=dist, seed=seed)))
        for it in res.trace[1:]:
            e = it.eps_estimate
            assert it.cert.eps_earning <= 2 * e / (1 + e) + 1e-12
            assert it.cert.eps_optimality <= 1e-6 and it.cert.eps_supply <= 1e-6


class TestTraceExport:
    def test_columns_and_rows(self, tmp_path):
        res = run(generate(GenSpec(n=6, seed=1)))
        path = tmp_path / "t.csv"
        write_trace_csv(res, path)
        rows = list(csv.DictReader(path.open()))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == len(res.trace)
        assert [int(r["t"]) for r in rows] == [it.t for it in res.trace]
        assert trace_csv(res) == path.read_text()

    def test_stream(self):
        buf = io.StringIO()
        write_trace_csv(run(fig1()), buf)
        assert buf.getvalue().startswith(",".join(TRACE_COLUMNS))


def test_beta_is_induced():
    inst = generate(GenSpec(n=6, dist="randint", seed=9))
    for it in run(inst).trace:
        np.testing.assert_allclose(it.y.beta, induced_beta(inst, it.y.prices), rtol=1e-15)
