"""Exterior point method over disutility profiles.

A profile ``d`` is feasible when some full allocation ``x`` gives every agent
disutility ``<d_i, x_i> <= d_i``. Starting from a small infeasible profile,
each step projects onto the feasible set above the current profile, turns
the projection residual into a cutting-plane normal ``a`` and moves to
``b / a``.

The projection is solved in disutility space: with ``u(x)_i = <d_i, x_i>``,
the nearest feasible ``d >= d_k`` is ``max(u, d_k)`` for the ``u`` minimizing
``sum((u - d_k)_+ ** 2)`` over the polytope ``{u(x)}``. The vertices of that
polytope assign each chore to a single agent, which makes the linear
minimization step a per-chore argmin.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np
from scipy import linalg, optimize

from . import lp
from .certify import APPROX_TOL, EXACT_TOL, Certificate, certify_ce
from .market import ChoresInstance, EquilibriumCandidate, FloatArray, MarketError

logger = logging.getLogger(__name__)

DEFAULT_PROJ_TOL = 1e-8
DEFAULT_PROJ_STEPS = 20_000
DEFAULT_MAX_ITERS = 500
FEAS_THRESHOLD = 1e-9
START_SCALE = 1e-3


class ProjectionError(RuntimeError):
    """The projection did not reach its gap tolerance within the step cap."""


# -- feasibility --------------------------------------------------------------------

def _slack_lp(inst: ChoresInstance, d: FloatArray) -> lp.LpProblem:
    """``min sum(s)`` s.t. ``<d_i, x_i> - s_i <= d_i``, ``sum_i x_ij = 1``; vars ``[x, s]``."""
    n, m = inst.n, inst.m
    A_ub = np.zeros((n, n * m + n))
    for i in range(n):
        A_ub[i, i * m : (i + 1) * m] = inst.d[i]
    A_ub[:, n * m :] = -np.eye(n)
    A_eq = np.zeros((m, n * m + n))
    for i in range(n):
        A_eq[np.arange(m), i * m + np.arange(m)] = 1.0
    c = np.concatenate([np.zeros(n * m), np.ones(n)])
    return lp.LpProblem(c, A_ub, d, A_eq, np.ones(m))


def _threshold(d: FloatArray) -> float:
    return FEAS_THRESHOLD * max(1.0, float(np.max(np.abs(d))))


def recover_allocation(inst: ChoresInstance, d: FloatArray) -> tuple[FloatArray, float]:
    """Allocation minimizing total excess disutility over ``d``, and that excess."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (inst.n,):
        raise MarketError(f"profile has shape {d.shape}, expected ({inst.n},)")
    sol = lp.solve(_slack_lp(inst, d))
    if not sol.ok:
        raise MarketError(f"allocation LP is {sol.status.value}")
    x = np.maximum(sol.z[: inst.n * inst.m].reshape(inst.n, inst.m), 0.0)
    return x, max(0.0, float(sol.objective))


def feasibility_margin(inst: ChoresInstance, d: FloatArray) -> float:
    """Least total excess ``sum_i (<d_i, x_i> - d_i)_+`` over full allocations."""
    return recover_allocation(inst, d)[1]


def is_feasible_profile(inst: ChoresInstance, d: FloatArray) -> bool:
    d = np.asarray(d, dtype=np.float64)
    return feasibility_margin(inst, d) <= _threshold(d)


# -- projection -----------------------------------------------------------------------

def _vertex_u(inst: ChoresInstance, sigma: tuple[int, ...]) -> FloatArray:
    u = np.zeros(inst.n)
    np.add.at(u, np.asarray(sigma), inst.d[np.asarray(sigma), np.arange(inst.m)])
    return u


def _vertex_x(inst: ChoresInstance, sigma: tuple[int, ...]) -> FloatArray:
    x = np.zeros((inst.n, inst.m))
    x[np.asarray(sigma), np.arange(inst.m)] = 1.0
    return x


def lmo_greedy(inst: ChoresInstance, g: FloatArray) -> tuple[int, ...]:
    """Vertex minimizing ``<g, u>``: each chore goes to ``argmin_i g_i d_ij``."""
    return tuple(int(i) for i in np.argmin(g[:, None] * inst.d, axis=0))


def lmo_lp(inst: ChoresInstance, g: FloatArray) -> tuple[int, ...]:
    """Same oracle through the simplex solver."""
    n, m = inst.n, inst.m
    A_eq = np.zeros((m, n * m))
    for i in range(n):
        A_eq[np.arange(m), i * m + np.arange(m)] = 1.0
    sol = lp.solve(lp.LpProblem((g[:, None] * inst.d).reshape(-1), A_eq=A_eq, b_eq=np.ones(m)))
    if not sol.ok:
        raise ProjectionError(f"oracle LP is {sol.status.value}")
    return tuple(int(i) for i in np.argmax(sol.z.reshape(n, m), axis=0))


LMOS = {"greedy": lmo_greedy, "lp": lmo_lp}


def _line_search(c: FloatArray, e: FloatArray, gmax: float) -> float:
    """Minimize ``sum((c + g e)_+ ** 2)`` over ``g`` in ``[0, gmax]``."""

    def slope(g: float) -> float:
        return float(e @ np.maximum(c + g * e, 0.0))

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(gmax) <= 0.0:
        return gmax
    nz = e != 0
    kinks = -c[nz] / e[nz]
    pts = np.unique(np.concatenate([[0.0, gmax], kinks[(kinks > 0) & (kinks < gmax)]]))
    lo, hi = 0.0, gmax
    for g in pts[1:]:
        if slope(g) >= 0.0:
            hi = g
            break
        lo = g
    # slope is affine on [lo, hi]
    active = (c + 0.5 * (lo + hi) * e) > 0
    a, b = float(e[active] @ c[active]), float(e[active] @ e[active])
    return float(np.clip(-a / b, lo, hi)) if b > 0 else lo


def _phi(u: FloatArray, d_k: FloatArray) -> float:
    return float(np.sum(np.maximum(u - d_k, 0.0) ** 2))


def _corrective_weights(V: FloatArray, d_k: FloatArray, u: FloatArray) -> FloatArray:
    """Minimize the quadratic piece of ``phi`` active at ``u`` over the convex
    hull of the columns of ``V`` (simplex-constrained least squares).

    The support comes from NNLS with a heavily weighted sum-to-one row; the
    weights on that support are then refined by an exact equality-constrained
    solve when it stays nonnegative.
    """
    rows = u >= d_k
    A, b = V[rows], d_k[rows]
    kappa = 1e4 * max(1.0, float(np.max(np.abs(V))))
    lam, _ = optimize.nnls(np.vstack([A, np.full((1, V.shape[1]), kappa)]), np.append(b, kappa))
    if not lam.sum() > 0:
        return np.full(V.shape[1], 1.0 / V.shape[1])
    lam /= lam.sum()
    support = np.flatnonzero(lam > 0)
    if support.size > 1:
        base = np.full(support.size, 1.0 / support.size)
        N = linalg.null_space(np.ones((1, support.size)))
        mu = linalg.lstsq(A[:, support] @ N, b - A[:, support] @ base)[0]
        refined = base + N @ mu
        if np.all(refined >= 0):
            lam = np.zeros_like(lam)
            lam[support] = refined
    return lam


@dataclass(frozen=True)
class Projection:
    d_star: FloatArray
    x_witness: FloatArray
    gap: float
    steps: int


def project_onto_feasible(
    inst: ChoresInstance,
    d_k: FloatArray,
    tol: float = DEFAULT_PROJ_TOL,
    max_steps: int = DEFAULT_PROJ_STEPS,
    lmo: str = "greedy",
) -> Projection:
    """Nearest feasible profile above ``d_k`` by fully corrective Frank-Wolfe.

    Each step adds the oracle vertex to the active set and compares two moves,
    both with exact line search: toward the minimizer of the current quadratic
    piece over the active hull, and a pairwise swap of weight from the worst
    active vertex to the oracle vertex. The better one is kept.

    Stops once the Frank-Wolfe gap of ``phi(u) = sum((u - d_k)_+ ** 2)`` is at
    most ``tol * max(1, phi(u))``; the gap bounds ``phi(u) - min phi``.

    Raises:
        ProjectionError: the gap tolerance was not met within ``max_steps``.
    """
    d_k = np.asarray(d_k, dtype=np.float64)
    if d_k.shape != (inst.n,):
        raise MarketError(f"profile has shape {d_k.shape}, expected ({inst.n},)")
    oracle = LMOS[lmo]
    start = oracle(inst, np.ones(inst.n))
    active: dict[tuple[int, ...], float] = {start: 1.0}
    verts: dict[tuple[int, ...], FloatArray] = {start: _vertex_u(inst, start)}
    u = verts[start].copy()
    gap = math.inf
    for step in range(max_steps):
        c = u - d_k
        g = 2.0 * np.maximum(c, 0.0)
        phi = _phi(u, d_k)
        fw = oracle(inst, g)
        if fw not in verts:
            verts[fw] = _vertex_u(inst, fw)
        gap = float(g @ (u - verts[fw]))
        if gap <= tol * max(1.0, phi):
            break
        if fw not in active:
            active[fw] = 0.0
        keys = list(active)
        lam = np.array([active[s] for s in keys])
        V = np.column_stack([verts[s] for s in keys])
        # candidate 1: toward the minimizer of the active quadratic piece
        corr = _corrective_weights(V, d_k, u)
        g1 = _line_search(c, V @ corr - u, 1.0)
        lam1 = (1.0 - g1) * lam + g1 * corr
        # candidate 2: pairwise step from the worst active vertex to the oracle vertex
        k_fw = keys.index(fw)
        k_away = max((k for k in range(len(keys)) if lam[k] > 0), key=lambda k: float(g @ V[:, k]))
        g2 = _line_search(c, V[:, k_fw] - V[:, k_away], lam[k_away])
        lam2 = lam.copy()
        lam2[k_away] -= g2
        lam2[k_fw] += g2
        lam = min((lam1, lam2), key=lambda w: _phi(V @ w, d_k))
        lam[lam < 1e-15] = 0.0
        lam /= lam.sum()
        active = {s: w for s, w in zip(keys, lam) if w > 0}
        u = V @ lam
    else:
        raise ProjectionError(f"gap {gap:.3e} above {tol:.1e} after {max_steps} steps")
    x = sum(w * _vertex_x(inst, s) for s, w in active.items())
    return Projection(np.maximum(u, d_k), x, max(gap, 0.0), step)


# -- the method ------------------------------------------------------------------------

@dataclass(frozen=True)
class EpmState:
    """``status`` is one of running, exact, approx, failed."""

    k: int
    d_k: FloatArray
    d_star: FloatArray | None
    a_k: FloatArray | None
    status: str = "running"

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.d_k) <= 0):
            raise MarketError("profile must stay strictly positive")


@dataclass(frozen=True)
class EpmTraceRow:
    k: int
    dist: float
    gap: float
    margin: float


@dataclass(frozen=True)
class EpmResult:
    state: EpmState
    candidate: EquilibriumCandidate | None
    certificate: Certificate | None
    trace: tuple[EpmTraceRow, ...]
    first_approx_iter: int | None = None
    reason: str = ""
    proj_steps: int = 0

    @property
    def status(self) -> str:
        return self.state.status

    @property
    def iters(self) -> int:
        return self.state.k


def default_start(inst: ChoresInstance) -> FloatArray:
    return START_SCALE * inst.d.min(axis=1)


def recover_prices(inst: ChoresInstance, a: FloatArray) -> FloatArray:
    return (np.asarray(a)[:, None] * inst.d).min(axis=0)


def _grade(cert: Certificate) -> str:
    if cert.is_exact(EXACT_TOL):
        return "exact"
    if cert.is_strongly_approx(APPROX_TOL, EXACT_TOL):
        return "approx"
    return "failed"


def epm_run(
    inst: ChoresInstance,
    d0: FloatArray | None = None,
    tol: float = DEFAULT_PROJ_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    max_proj_steps: int = DEFAULT_PROJ_STEPS,
    lmo: str = "greedy",
) -> EpmResult:
    """Run the exterior point method and certify what it returns.

    Failures of the method (projection stall, degenerate normal, iteration
    cap, or a terminal pair that is not even strongly approximate) are
    reported through ``status == "failed"`` and ``reason``.
    """
    d = default_start(inst) if d0 is None else np.asarray(d0, dtype=np.float64)
    if d.shape != (inst.n,) or np.any(d <= 0):
        raise MarketError("d0 must be a strictly positive profile")
    B = inst.total_budget
    a: FloatArray | None = None
    d_star: FloatArray | None = None
    witness: FloatArray | None = None
    trace: list[EpmTraceRow] = []
    first_approx: int | None = None
    steps = 0

    def done(k: int, status: str, reason: str, cand=None, cert=None) -> EpmResult:
        logger.info("epm %s after %d iterations%s", status, k, f" ({reason})" if reason else "")
        state = EpmState(k, d, d_star, a, status)
        return EpmResult(state, cand, cert, tuple(trace), first_approx, reason, steps)

    for k in range(max_iters):
        x_rec, margin = recover_allocation(inst, d)
        if margin <= _threshold(d):
            trace.append(EpmTraceRow(k, 0.0, 0.0, margin))
            if a is None:
                return done(k, "failed", "start profile is already feasible")
            p = recover_prices(inst, a)
            cand = EquilibriumCandidate(p, x_rec)
            cert = certify_ce(inst, cand)
            if not cert.is_exact(EXACT_TOL) and witness is not None:
                # fall back to the allocation behind the last projection
                alt = EquilibriumCandidate(p, witness)
                alt_cert = certify_ce(inst, alt)
                if _grade(alt_cert) == "approx" and _grade(cert) == "failed":
                    cand, cert = alt, alt_cert
            status = _grade(cert)
            return done(k, status, "" if status != "failed" else "terminal pair is not an equilibrium", cand, cert)
        try:
            proj = project_onto_feasible(inst, d, tol, max_proj_steps, lmo)
        except ProjectionError as err:
            return done(k, "failed", str(err))
        steps += proj.steps
        d_star, witness = proj.d_star, proj.x_witness
        diff = d_star - d
        trace.append(EpmTraceRow(k, float(np.linalg.norm(diff)), proj.gap, margin))
        denom = float(diff @ d_star)
        if not denom > 0 or np.any(diff <= 0):
            return done(k, "failed", "projection normal is not strictly positive")
        a = diff * B / denom
        if first_approx is None and np.all(recover_prices(inst, a) > 0):
            cert = certify_ce(inst, EquilibriumCandidate(recover_prices(inst, a), proj.x_witness))
            if cert.is_strongly_approx(APPROX_TOL, EXACT_TOL):
                first_approx = k + 1
        d = inst.b / a
    return done(max_iters, "failed", "iteration cap")


TRACE_COLUMNS = ("k", "dist", "fw_gap", "margin")


def write_trace_csv(result: EpmResult, out: str | Path | TextIO) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_trace_csv(result, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in result.trace:
        w.writerow([row.k, format(row.dist, ".17g"), format(row.gap, ".17g"), format(row.margin, ".17g")])
