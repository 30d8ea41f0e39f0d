"""Greedy Frank-Wolfe over the redundant chores dual.

Each iteration solves the linearization LP

    minimize    sum_i b_i * beta_i / beta_prev_i
    subject to  p_j - d_ij * beta_i <= 0      for all (i, j)
                sum_j p_j == sum_i b_i
                beta, p >= 0

and jumps to its optimal vertex. The inequality-row duals of the LP are an
allocation ``x``; rescaled by the average step ratio they give the
equilibrium candidate of the iterate.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from . import lp
from .certify import APPROX_TOL, Certificate, KktWitness, certify_ce
from .market import (
    IS_QUAD_C,
    ChoresInstance,
    DualPoint,
    EquilibriumCandidate,
    FloatArray,
    MarketError,
    dual_objective,
    dual_objective_upper_bound,
    induced_beta,
    itakura_saito,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 10_000
IDENTITY_TOL = 1e-7
MONOTONE_TOL = 1e-9
BOUND_TOL = 1e-8
PROGRESS_DIVISOR = 2.3


class GfwError(RuntimeError):
    """The per-iteration LP could not be solved."""


class GfwInvariantError(AssertionError):
    """A per-iteration identity or bound failed; indicates a solver bug."""


@dataclass(frozen=True)
class GfwConfig:
    """Run parameters.

    ``stop_on_eps`` controls what happens once ``eps_estimate`` drops to
    ``eps_target``: stop with status ``eps_reached`` (default) or record the
    hit and keep going until the exact stopping test fires.
    """

    term_tol: float = 1e-10
    eps_target: float | None = None
    max_iters: int | None = None
    check_invariants: bool = False
    stop_on_eps: bool = True
    trace_every: int = 1
    warm_start: bool = True
    lp_method: str = "auto"

    def __post_init__(self) -> None:
        if not self.term_tol > 0:
            raise ValueError("term_tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.eps_target is not None and not 0 < self.eps_target < 1:
            raise ValueError("eps_target must lie in (0, 1)")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")

    def iteration_cap(self, inst: ChoresInstance) -> int:
        if self.max_iters is not None:
            return self.max_iters
        if self.eps_target is None:
            return DEFAULT_MAX_ITERS
        return max(DEFAULT_MAX_ITERS, 10 * iteration_bound(inst, self.eps_target))


@dataclass(frozen=True)
class GfwIterate:
    """State after ``t`` linearization steps.

    ``x`` is the raw LP dual that produced ``y`` and ``x_bar`` its normalized
    version; both are ``None`` at ``t = 0``. ``gain`` is the linearization gain
    of the step into this iterate and ``cert`` the certificate of
    ``(prices, x_bar)``.
    """

    t: int
    y: DualPoint
    x: FloatArray | None
    x_bar: FloatArray | None
    mu: float
    objective: float
    step_ratio: FloatArray
    d_is: float
    eps_estimate: float
    gain: float = 0.0
    cert: Certificate | None = None

    @property
    def min_price(self) -> float:
        return float(self.y.prices.min())

    @property
    def max_step_ratio_dev(self) -> float:
        return float(np.max(np.abs(self.step_ratio - 1.0)))


@dataclass(frozen=True)
class GfwResult:
    """Outcome of :func:`run`.

    ``iters`` counts LP solves. ``witness`` is the KKT witness of the final
    point (set only when ``status == "exact_kkt"``); ``candidate`` is the
    equilibrium candidate reported for the final point. ``first_eps_iter`` is
    the first ``t`` whose certificate was ``eps_target``-strongly approximate,
    counting the exact terminal candidate as iteration ``iters``.
    """

    final: GfwIterate
    trace: tuple[GfwIterate, ...]
    status: str
    iters: int
    witness: KktWitness | None
    candidate: EquilibriumCandidate
    first_eps_iter: int | None = None
    lp_pivots: int = 0

    @property
    def initial(self) -> GfwIterate:
        return self.trace[0]


def initial_point(inst: ChoresInstance) -> DualPoint:
    """Uniform prices summing to the total budget, with their induced beta."""
    p = np.full(inst.m, inst.total_budget / inst.m)
    return DualPoint(induced_beta(inst, p), p)


def build_subproblem(inst: ChoresInstance, beta_prev: Any) -> lp.LpProblem:
    """Linearization LP at ``beta_prev`` over variables ``[beta, p]``.

    Row ``i*m + j`` is ``p_j - d_ij beta_i <= 0``, so the inequality duals
    reshape to an ``n x m`` allocation.
    """
    beta_prev = np.asarray(beta_prev, dtype=np.float64)
    if beta_prev.shape != (inst.n,):
        raise MarketError(f"beta_prev has shape {beta_prev.shape}, expected ({inst.n},)")
    if np.any(beta_prev <= 0):
        raise MarketError("beta_prev must be strictly positive")
    n, m = inst.n, inst.m
    c = np.concatenate([inst.b / beta_prev, np.zeros(m)])
    A_ub = np.zeros((n * m, n + m))
    rows = np.arange(n * m)
    A_ub[rows, rows // m] = -inst.d.reshape(-1)
    A_ub[rows, n + rows % m] = 1.0
    A_eq = np.concatenate([np.zeros(n), np.ones(m)])[None, :]
    return lp.LpProblem(c, A_ub, np.zeros(n * m), A_eq, [inst.total_budget])


def normalize_allocation(inst: ChoresInstance, x: Any, step_ratio: Any) -> FloatArray:
    """Scale ``x`` by ``sum(b) / sum_i b_i * step_ratio_i``."""
    r = np.asarray(step_ratio, dtype=np.float64)
    if np.any(r <= 0):
        raise MarketError("step ratios must be strictly positive")
    return inst.total_budget / float(inst.b @ r) * np.asarray(x, dtype=np.float64)


def iteration_bound(inst: ChoresInstance, eps: float) -> int:
    """Worst-case iteration count to an ``eps``-strongly approximate equilibrium.

    ``G = n * max(b) * log(m * max(d) / min(b))`` bounds the objective range;
    the count is ``ceil(3 G / (min(b) eps^2) + G / (c min(b)))``. ``G`` is
    negative when ``m * max(d) < min(b)``, and so is the result.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    bmin, bmax = float(inst.b.min()), float(inst.b.max())
    G = inst.n * bmax * math.log(inst.m * float(inst.d.max()) / bmin)
    return math.ceil(3.0 * G / (bmin * eps * eps) + G / (IS_QUAD_C * bmin))


def _solve_lp(prob: lp.LpProblem, cfg: GfwConfig, warm: lp.LpSolution | None) -> lp.LpSolution:
    sol = lp.solve(prob, method=cfg.lp_method, warm=warm if cfg.warm_start else None)
    if not sol.ok:
        raise GfwError(f"linearization LP is {sol.status.value}")
    return sol


def _relative(a: FloatArray, b: FloatArray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), np.finfo(float).tiny)))


def appendix_a_checks(inst: ChoresInstance, prev: GfwIterate, cur: GfwIterate) -> list[tuple[str, float]]:
    """Per-step primal-dual identities between ``prev`` and its successor ``cur``.

    Returns ``(name, residual)`` pairs, all relative:

    * ``disutility``: ``sum_j d_ij x_ij == b_i / beta_prev_i``
    * ``outflow``: ``sum_j d_ij x_ij == (1 / beta_i) sum_j p_j x_ij``
    * ``allocation``: ``sum_i x_ij == sum_i b_i r_i / sum(b)`` with ``r = beta / beta_prev``
    * ``progress``: shortfall of ``f(cur) - f(prev)`` below
      ``min(b) eps^2 / 2.3`` when the raw pair ``(p, x)`` of ``cur`` fails
      the equilibrium test at level ``eps`` (its own certificate level);
      zero when the inequality holds.
    """
    if cur.x is None or cur.t == prev.t:
        return [("disutility", 0.0), ("outflow", 0.0), ("allocation", 0.0), ("progress", 0.0)]
    x, d = cur.x, inst.d
    beta_prev, beta, p = prev.y.beta, cur.y.beta, cur.y.prices
    dis = (d * x).sum(axis=1)
    r = beta / beta_prev
    rho = float(inst.b @ r) / inst.total_budget
    res = [
        ("disutility", _relative(dis, inst.b / beta_prev)),
        ("outflow", _relative(dis, (x @ p) / beta)),
        ("allocation", _relative(x.sum(axis=0), np.full(inst.m, rho))),
    ]
    eps = certify_ce(inst, EquilibriumCandidate(p, np.maximum(x, 0.0))).max_eps
    required = float(inst.b.min()) * eps * eps / PROGRESS_DIVISOR
    shortfall = required - (cur.objective - prev.objective)
    res.append(("progress", max(0.0, shortfall - MONOTONE_TOL)))
    return res


def _invariants(inst: ChoresInstance, prev: GfwIterate, cur: GfwIterate, bound: float) -> None:
    problems = []
    if cur.gain < -MONOTONE_TOL:
        problems.append(f"negative linearization gain {cur.gain:.3e}")
    if cur.objective - prev.objective < cur.gain - MONOTONE_TOL:
        problems.append("objective increase below linearization gain")
    if cur.objective + inst.total_budget > bound + BOUND_TOL:
        problems.append("objective exceeds the upper bound")
    if not cur.min_price > 0:
        problems.append("zero price")
    if cur.y.violation(inst) > inst.feas_tol:
        problems.append(f"infeasible iterate (violation {cur.y.violation(inst):.3e})")
    for name, value in appendix_a_checks(inst, prev, cur):
        if value > IDENTITY_TOL:
            problems.append(f"{name} residual {value:.3e}")
    if problems:
        raise GfwInvariantError(f"iteration {cur.t}: " + "; ".join(problems))


def run(inst: ChoresInstance, cfg: GfwConfig | None = None) -> GfwResult:
    """Run greedy Frank-Wolfe from :func:`initial_point`.

    Stops with ``exact_kkt`` when the linearization gain at ``y^t`` is at most
    ``term_tol * max(1, |f(y^t)|)`` and returns ``y^t``; with ``eps_reached``
    when ``eps_estimate <= eps_target`` (if ``stop_on_eps``); otherwise with
    ``iter_cap``.

    Raises:
        GfwError: the LP solver failed.
        GfwInvariantError: ``check_invariants`` is set and a check failed.
    """
    cfg = cfg or GfwConfig()
    cap = cfg.iteration_cap(inst)
    bound = dual_objective_upper_bound(inst)
    B = inst.total_budget
    y = initial_point(inst)
    cur = GfwIterate(
        t=0, y=y, x=None, x_bar=None, mu=0.0, objective=dual_objective(inst, y),
        step_ratio=np.ones(inst.n), d_is=0.0, eps_estimate=math.inf,
    )
    trace = [cur]
    warm: lp.LpSolution | None = None
    pivots = 0
    first_eps: int | None = None
    eps_hit = cfg.eps_target if cfg.eps_target is not None else APPROX_TOL

    def finish(status: str, witness: KktWitness | None, cand: EquilibriumCandidate, iters: int) -> GfwResult:
        if trace[-1] is not cur:
            trace.append(cur)
        logger.info("gfw %s after %d LPs, f=%.12g", status, iters, cur.objective)
        return GfwResult(cur, tuple(trace), status, iters, witness, cand, first_eps, pivots)

    for t in range(cap):
        beta_prev = cur.y.beta
        sol = _solve_lp(build_subproblem(inst, beta_prev), cfg, warm)
        warm, pivots = sol, pivots + sol.iterations
        p = np.maximum(sol.z[inst.n:], 0.0)
        x = sol.duals_ub.reshape(inst.n, inst.m)
        if np.any(p <= 0):
            logger.warning("LP returned a zero price at step %d: %s", t + 1, np.flatnonzero(p <= 0))
        beta = induced_beta(inst, p)
        r = beta / beta_prev
        gain = B - float(inst.b @ r)

        if gain <= cfg.term_tol * max(1.0, abs(cur.objective)):
            rho = float(inst.b @ r) / B
            witness = KktWitness(beta_prev, cur.y.prices, x, 1.0 - rho)
            cand = EquilibriumCandidate(cur.y.prices, np.maximum(x, 0.0) / rho)
            if first_eps is None and certify_ce(inst, cand).is_strongly_approx(eps_hit):
                first_eps = t + 1
            return finish("exact_kkt", witness, cand, t + 1)

        y_new = DualPoint(beta, p)
        x_bar = normalize_allocation(inst, x, r)
        cert = certify_ce(inst, EquilibriumCandidate(p, np.maximum(x_bar, 0.0)))
        nxt = GfwIterate(
            t=t + 1, y=y_new, x=x, x_bar=x_bar, mu=-float(sol.duals_eq[0]),
            objective=dual_objective(inst, y_new), step_ratio=r,
            d_is=itakura_saito(beta, beta_prev), eps_estimate=float(np.max(np.abs(r - 1.0))),
            gain=gain, cert=cert,
        )
        if cfg.check_invariants:
            _invariants(inst, cur, nxt, bound)
        cur = nxt
        if (cur.t % cfg.trace_every) == 0:
            trace.append(cur)
        if first_eps is None and cert.is_strongly_approx(eps_hit):
            first_eps = cur.t
        if cfg.eps_target is not None and cfg.stop_on_eps and cur.eps_estimate <= cfg.eps_target:
            return finish("eps_reached", None, EquilibriumCandidate(p, np.maximum(x_bar, 0.0)), cur.t)

    cand = (
        EquilibriumCandidate(cur.y.prices, np.maximum(cur.x_bar, 0.0))
        if cur.x_bar is not None
        else EquilibriumCandidate(cur.y.prices, np.zeros((inst.n, inst.m)))
    )
    return finish("iter_cap", None, cand, cap)


# -- export -----------------------------------------------------------------------

TRACE_COLUMNS = ("t", "objective", "eps_estimate", "d_is", "min_price", "max_step_ratio_dev")


def write_trace_csv(result: GfwResult, out: str | Path | TextIO) -> None:
    """One row per retained iterate."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_trace_csv(result, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for it in result.trace:
        w.writerow([
            it.t,
            format(it.objective, ".17g"),
            format(it.eps_estimate, ".17g"),
            format(it.d_is, ".17g"),
            format(it.min_price, ".17g"),
            format(it.max_step_ratio_dev, ".17g"),
        ])


def trace_csv(result: GfwResult) -> str:
    buf = io.StringIO()
    write_trace_csv(result, buf)
    return buf.getvalue()

