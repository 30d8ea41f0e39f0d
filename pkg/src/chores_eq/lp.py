"""Dense revised simplex with dual-variable extraction.

Problems are stated in the canonical form

    minimize    c @ z
    subject to  A_ub @ z <= b_ub
                A_eq @ z == b_eq
                z >= 0

Dual sign convention (complementary-slackness form): ``duals_ub >= 0`` and
``duals_eq`` free, so that at an optimum

    c + A_ub.T @ duals_ub - A_eq.T @ duals_eq >= 0          (dual feasibility)
    c @ z == -b_ub @ duals_ub + b_eq @ duals_eq             (strong duality)

The engine works on the equality standard form ``A x = b, x >= 0`` obtained
by appending one slack per inequality row (slack columns follow the
structural columns). Basis indices reported in :class:`LpSolution` refer to
that column ordering.

When the inequality rows far outnumber the columns (the Frank-Wolfe
subproblems have ``n*m`` rows and ``n+m`` columns) the explicit LP dual is
solved instead; its basis matrix is only ``(n+m) x (n+m)``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

REFACTOR_EVERY = 50
PIVOT_TOL = 1e-9
OPT_TOL = 1e-10
FEAS_TOL = 1e-9
HARRIS_DELTA = 1e-10


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SimplexError(RuntimeError):
    """Internal solver failure: iteration guard exceeded or singular basis."""


def _as_matrix(a: Any, ncols: int, name: str) -> FloatArray:
    if a is None:
        return np.zeros((0, ncols))
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, ncols)
    if arr.ndim != 2 or arr.shape[1] != ncols:
        raise ValueError(f"{name} must have shape (k, {ncols}), got {arr.shape}")
    return arr


def _as_vector(a: Any, size: int, name: str) -> FloatArray:
    arr = np.zeros(0) if a is None else np.array(a, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have length {size}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class LpProblem:
    c: FloatArray
    A_ub: FloatArray | None = None
    b_ub: FloatArray | None = None
    A_eq: FloatArray | None = None
    b_eq: FloatArray | None = None

    def __post_init__(self) -> None:
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        nv = c.size
        A_ub = _as_matrix(self.A_ub, nv, "A_ub")
        A_eq = _as_matrix(self.A_eq, nv, "A_eq")
        b_ub = _as_vector(self.b_ub, A_ub.shape[0], "b_ub")
        b_eq = _as_vector(self.b_eq, A_eq.shape[0], "b_eq")
        for name, arr in (("c", c), ("A_ub", A_ub), ("b_ub", b_ub), ("A_eq", A_eq), ("b_eq", b_eq)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_ub(self) -> int:
        return self.A_ub.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    def dual(self) -> "LpProblem":
        """Explicit LP dual in canonical form, over ``[u, v_plus, v_minus]``.

        The dual optimum ``u, v_plus - v_minus`` are the duals of this problem,
        and the dual's inequality-row duals are this problem's ``z``.
        """
        A = np.hstack([-self.A_ub.T, self.A_eq.T, -self.A_eq.T])
        c = np.concatenate([self.b_ub, -self.b_eq, self.b_eq])
        return LpProblem(c=c, A_ub=A, b_ub=self.c)

    def dump(self) -> str:
        """Human-readable listing, one line per constraint."""
        def row(coefs: FloatArray) -> str:
            terms = [f"{v:+.6g}*z{k}" for k, v in enumerate(coefs) if v != 0]
            return " ".join(terms) or "0"

        lines = [f"min {row(self.c)}"]
        lines += [f"ub{r}: {row(a)} <= {rhs:.17g}" for r, (a, rhs) in enumerate(zip(self.A_ub, self.b_ub))]
        lines += [f"eq{r}: {row(a)} == {rhs:.17g}" for r, (a, rhs) in enumerate(zip(self.A_eq, self.b_eq))]
        lines.append(f"z >= 0  ({self.n_vars} vars)")
        return "\n".join(lines)


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    z: FloatArray | None = None
    duals_ub: FloatArray | None = None
    duals_eq: FloatArray | None = None
    objective: float = math.nan
    basis: tuple[int, ...] = ()
    iterations: int = 0
    warm: Any = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def kkt_residuals(prob: LpProblem, sol: LpSolution) -> dict[str, float]:
    """Primal/dual feasibility, complementary slackness and duality gap of ``sol``.

    Complementary slackness is reported as the largest ``|dual * slack|`` over
    inequality rows and over the bound constraints ``z >= 0``.
    """
    if not sol.ok:
        raise ValueError(f"solution is {sol.status.value}")
    z, yu, ye = sol.z, sol.duals_ub, sol.duals_eq
    slack = prob.b_ub - prob.A_ub @ z
    eq_res = prob.A_eq @ z - prob.b_eq
    primal = max(
        float(np.max(-slack, initial=0.0)),
        float(np.max(np.abs(eq_res), initial=0.0)),
        float(np.max(-z, initial=0.0)),
    )
    reduced = prob.c + prob.A_ub.T @ yu - prob.A_eq.T @ ye
    dual = max(float(np.max(-reduced, initial=0.0)), float(np.max(-yu, initial=0.0)))
    cs = max(float(np.max(np.abs(yu * slack), initial=0.0)), float(np.max(np.abs(z * reduced), initial=0.0)))
    gap = abs(float(prob.c @ z) - (float(-prob.b_ub @ yu) + float(prob.b_eq @ ye)))
    return {"primal": primal, "dual": dual, "complementary": cs, "gap": gap}


# -- standard form -----------------------------------------------------------

@dataclass
class _StdForm:
    A: FloatArray
    b: FloatArray
    c: FloatArray
    sign: FloatArray  # row flips applied so that b >= 0
    n_vars: int
    n_ub: int


def _standard_form(prob: LpProblem) -> _StdForm:
    nv, k, e = prob.n_vars, prob.n_ub, prob.n_eq
    A = np.zeros((k + e, nv + k))
    A[:k, :nv] = prob.A_ub
    A[:k, nv:] = np.eye(k)
    A[k:, :nv] = prob.A_eq
    b = np.concatenate([prob.b_ub, prob.b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    c = np.concatenate([prob.c, np.zeros(k)])
    return _StdForm(A, b, c, sign, nv, k)


# -- simplex core --------------------------------------------------------------

class _Tableau:
    """Revised simplex state: basis, explicit basis inverse, pivot counters."""

    def __init__(self, A: FloatArray, b: FloatArray, basis: list[int], max_iter: int) -> None:
        self.A = A
        self.b = b
        self.basis = list(basis)
        self.rows, self.cols = A.shape
        self.max_iter = max_iter
        self.pivots = 0
        self.since_refactor = 0
        self.degenerate = 0
        self.bland = False
        self.refactor()

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise SimplexError("singular basis matrix") from None
        if not np.all(np.isfinite(self.Binv)):
            raise SimplexError("singular basis matrix")
        self.since_refactor = 0

    def xB(self) -> FloatArray:
        return self.Binv @ self.b

    def duals(self, cost: FloatArray) -> FloatArray:
        return cost[self.basis] @ self.Binv

    def pivot(self, r: int, q: int, col: FloatArray) -> None:
        """Replace the ``r``-th basic variable by column ``q``; ``col = Binv @ A[:, q]``."""
        piv = col[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(col, row)
        self.Binv[r] = row
        self.basis[r] = q
        self.pivots += 1
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()
        if self.pivots > self.max_iter:
            raise SimplexError(f"iteration guard exceeded ({self.max_iter} pivots)")

    def note_step(self, step: float) -> None:
        if step <= FEAS_TOL:
            self.degenerate += 1
            if not self.bland and self.degenerate > 3 * (self.rows + self.cols):
                logger.debug("switching to Bland's rule after %d degenerate pivots", self.degenerate)
                self.bland = True


def _primal_simplex(tab: _Tableau, cost: FloatArray, allowed: npt.NDArray[np.bool_]) -> LpStatus:
    """Primal simplex from a primal feasible basis; returns OPTIMAL or UNBOUNDED."""
    scale = max(1.0, float(np.max(np.abs(cost), initial=0.0)))
    opt_tol = OPT_TOL * scale
    while True:
        y = tab.duals(cost)
        d = cost - y @ tab.A
        d[tab.basis] = 0.0
        d[~allowed] = 0.0
        if tab.bland:
            cand = np.flatnonzero(d < -opt_tol)
            if cand.size == 0:
                return LpStatus.OPTIMAL
            q = int(cand[0])
        else:
            q = int(np.argmin(d))
            if d[q] >= -opt_tol:
                return LpStatus.OPTIMAL
        col = tab.Binv @ tab.A[:, q]
        xB = np.maximum(tab.xB(), 0.0)
        pos = col > PIVOT_TOL
        if not np.any(pos):
            return LpStatus.UNBOUNDED
        idx = np.flatnonzero(pos)
        ratios = xB[idx] / col[idx]
        if tab.bland:
            tmin = ratios.min()
            ties = idx[ratios <= tmin + HARRIS_DELTA]
            r = int(min(ties, key=lambda i: tab.basis[i]))
        else:
            # Harris two-pass: among near-minimal ratios take the largest pivot
            bound = np.min((xB[idx] + HARRIS_DELTA) / col[idx])
            ties = idx[ratios <= bound]
            r = int(ties[np.argmax(col[ties])])
        step = xB[r] / col[r]
        tab.note_step(step)
        tab.pivot(r, q, col)


def _dual_simplex(tab: _Tableau, cost: FloatArray, allowed: npt.NDArray[np.bool_]) -> LpStatus:
    """Dual simplex from a dual feasible basis; returns OPTIMAL or INFEASIBLE."""
    feas_tol = FEAS_TOL * max(1.0, float(np.max(np.abs(tab.b), initial=0.0)))
    while True:
        xB = tab.xB()
        if tab.bland:
            neg = np.flatnonzero(xB < -feas_tol)
            if neg.size == 0:
                return LpStatus.OPTIMAL
            r = int(min(neg, key=lambda i: tab.basis[i]))
        else:
            r = int(np.argmin(xB))
            if xB[r] >= -feas_tol:
                return LpStatus.OPTIMAL
        alpha = tab.Binv[r] @ tab.A
        alpha[tab.basis] = 0.0
        alpha[~allowed] = 0.0
        cand = np.flatnonzero(alpha < -PIVOT_TOL)
        if cand.size == 0:
            return LpStatus.INFEASIBLE
        y = tab.duals(cost)
        d = np.maximum(cost[cand] - y @ tab.A[:, cand], 0.0)
        ratios = d / -alpha[cand]
        if tab.bland:
            tmin = ratios.min()
            q = int(cand[ratios <= tmin + HARRIS_DELTA][0])
        else:
            bound = np.min((d + HARRIS_DELTA) / -alpha[cand])
            ties = cand[ratios <= bound]
            q = int(ties[np.argmax(-alpha[ties])])
        col = tab.Binv @ tab.A[:, q]
        tab.note_step(float(np.min(ratios)))
        tab.pivot(r, q, col)


def _iteration_guard(rows: int, cols: int) -> int:
    return 50 * (rows + cols) + 1000


def _solve_standard(sf: _StdForm, warm: list[int] | None) -> tuple[LpStatus, FloatArray | None, FloatArray | None, list[int], int, list[int]]:
    """Two-phase simplex on ``sf``.

    Returns ``(status, x, y, basis, pivots, kept_rows)`` where ``y`` are the
    standard-form row multipliers for the rows in ``kept_rows`` (redundant
    equality rows are dropped after phase 1).
    """
    A, b, c = sf.A, sf.b, sf.c
    rows, N = A.shape
    guard = _iteration_guard(rows, N)
    allowed = np.ones(N, dtype=bool)

    if warm is not None and len(warm) == rows:
        try:
            tab = _Tableau(A, b, warm, guard)
        except SimplexError:
            tab = None
        if tab is not None:
            xB = tab.xB()
            feas_tol = FEAS_TOL * max(1.0, float(np.max(np.abs(b), initial=0.0)))
            d = c - tab.duals(c) @ A
            d[tab.basis] = 0.0
            status = None
            if np.all(xB >= -feas_tol):
                status = _primal_simplex(tab, c, allowed)
            elif np.all(d >= -OPT_TOL * max(1.0, float(np.max(np.abs(c), initial=0.0)))):
                status = _dual_simplex(tab, c, allowed)
                if status is LpStatus.OPTIMAL:
                    status = _primal_simplex(tab, c, allowed)
            if status is not None:
                return _finish(tab, c, status, list(range(rows)))

    # initial basis: slack columns where they form identity columns, else artificials
    basis: list[int] = []
    art_rows: list[int] = []
    for r in range(rows):
        if r < sf.n_ub and sf.sign[r] > 0:
            basis.append(sf.n_vars + r)
        else:
            art_rows.append(r)
            basis.append(-1)
    n_art = len(art_rows)
    if n_art == 0:
        tab = _Tableau(A, b, basis, guard)
        status = _primal_simplex(tab, c, allowed)
        return _finish(tab, c, status, list(range(rows)))

    A1 = np.hstack([A, np.zeros((rows, n_art))])
    for k, r in enumerate(art_rows):
        A1[r, N + k] = 1.0
        basis[r] = N + k
    c1 = np.concatenate([np.zeros(N), np.ones(n_art)])
    tab = _Tableau(A1, b, basis, guard)
    allowed1 = np.ones(N + n_art, dtype=bool)
    _primal_simplex(tab, c1, allowed1)
    infeas = float(c1[tab.basis] @ tab.xB())
    if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(b), initial=0.0))):
        return LpStatus.INFEASIBLE, None, None, tab.basis, tab.pivots, list(range(rows))

    # drive zero-level artificials out of the basis; drop redundant rows
    redundant: list[int] = []
    for r in range(rows):
        if tab.basis[r] < N:
            continue
        row = tab.Binv[r] @ A
        row[[j for j in tab.basis if j < N]] = 0.0
        q = int(np.argmax(np.abs(row)))
        if abs(row[q]) > PIVOT_TOL:
            tab.pivot(r, q, tab.Binv @ A1[:, q])
        else:
            redundant.append(r)
    kept = [r for r in range(rows) if r not in redundant]
    basis2 = [tab.basis[r] for r in kept]
    pivots = tab.pivots
    A2, b2 = A[kept], b[kept]
    tab2 = _Tableau(A2, b2, basis2, guard)
    tab2.pivots = pivots
    status = _primal_simplex(tab2, c, allowed)
    return _finish(tab2, c, status, kept)


def _finish(tab: _Tableau, c: FloatArray, status: LpStatus, kept: list[int]):
    if status is not LpStatus.OPTIMAL:
        return status, None, None, tab.basis, tab.pivots, kept
    tab.refactor()
    x = np.zeros(tab.cols)
    x[tab.basis] = np.maximum(tab.xB(), 0.0)
    y = tab.duals(c)
    return status, x, y, list(tab.basis), tab.pivots, kept


def _solve_primal(prob: LpProblem, warm_basis: list[int] | None) -> LpSolution:
    sf = _standard_form(prob)
    status, x, y, basis, pivots, kept = _solve_standard(sf, warm_basis)
    if status is not LpStatus.OPTIMAL:
        return LpSolution(status, iterations=pivots)
    rows = sf.A.shape[0]
    lam = np.zeros(rows)
    lam[kept] = y
    lam *= sf.sign
    z = x[: prob.n_vars]
    duals_ub = -lam[: prob.n_ub]
    duals_eq = lam[prob.n_ub:]
    warm_out = ("primal", basis) if len(kept) == rows else None
    return LpSolution(
        LpStatus.OPTIMAL, z, duals_ub, duals_eq, float(prob.c @ z), tuple(sorted(basis)), pivots, warm_out
    )


def _solve_via_dual(prob: LpProblem, warm_basis: list[int] | None) -> LpSolution | None:
    sol = _solve_primal(prob.dual(), warm_basis)
    if sol.status is LpStatus.UNBOUNDED:
        return LpSolution(LpStatus.INFEASIBLE, iterations=sol.iterations)
    if sol.status is LpStatus.INFEASIBLE:
        return None  # primal is infeasible or unbounded; let the primal route decide
    k, e, nv = prob.n_ub, prob.n_eq, prob.n_vars
    u = sol.z[:k]
    duals_eq = sol.z[k : k + e] - sol.z[k + e :]
    z = np.maximum(sol.duals_ub, 0.0)
    # complementary basis: z_j basic iff its dual slack is nonbasic, slack_r basic iff u_r nonbasic
    dual_basic = set(sol.basis)
    n_dual_struct = k + 2 * e
    basis = [j for j in range(nv) if n_dual_struct + j not in dual_basic]
    basis += [nv + r for r in range(k) if r not in dual_basic]
    warm_out = ("dual", sol.warm[1]) if sol.warm is not None else None
    return LpSolution(
        LpStatus.OPTIMAL, z, u, duals_eq, float(prob.c @ z), tuple(basis), sol.iterations, warm_out
    )


def solve(prob: LpProblem, method: str = "auto", warm: LpSolution | None = None) -> LpSolution:
    """Solve ``prob`` by the revised simplex method.

    Args:
        method: ``"primal"`` runs two-phase simplex on the problem itself,
            ``"dual"`` runs it on the explicit LP dual, ``"auto"`` picks the
            dual when inequality rows outnumber columns by more than 2:1.
        warm: a previous solution of a problem with the same constraint
            matrix; its basis seeds the solve (dual simplex if it is no
            longer primal feasible).

    Raises:
        SimplexError: iteration guard exceeded or numerically singular basis.
    """
    if method not in ("auto", "primal", "dual"):
        raise ValueError(f"unknown method {method!r}")
    rows = prob.n_ub + prob.n_eq
    if rows == 0:
        if np.any(prob.c < 0):
            return LpSolution(LpStatus.UNBOUNDED)
        z = np.zeros(prob.n_vars)
        return LpSolution(LpStatus.OPTIMAL, z, np.zeros(0), np.zeros(0), 0.0, ())
    if method == "auto":
        method = "dual" if prob.n_ub > 2 * (prob.n_vars + prob.n_eq) else "primal"
    token = warm.warm if warm is not None else None
    warm_basis = list(token[1]) if token is not None and token[0] == method else None
    if method == "dual":
        sol = _solve_via_dual(prob, warm_basis)
        if sol is not None:
            return sol
        return _solve_primal(prob, None)
    return _solve_primal(prob, warm_basis)


# -- brute-force oracle -----------------------------------------------------------

MAX_ORACLE_VARS = 12
MAX_ORACLE_ROWS = 20
MAX_ORACLE_BASES = 2_000_000


def brute_force_solve(prob: LpProblem) -> LpSolution:
    """Enumerate every basis of the standard form and keep the best one.

    A basis qualifies as optimal when it is both primal and dual feasible; the
    first such basis in lexicographic order is returned. If primal feasible
    bases exist but none is dual feasible the problem is unbounded.

    Raises:
        ValueError: problem larger than the enumeration guard, or constraint
            rows that are linearly dependent.
    """
    if prob.n_vars > MAX_ORACLE_VARS or prob.n_ub + prob.n_eq > MAX_ORACLE_ROWS:
        raise ValueError("problem too large for brute-force enumeration")
    sf = _standard_form(prob)
    A, b, c = sf.A, sf.b, sf.c
    rows, N = A.shape
    if rows == 0:
        return solve(prob)
    if math.comb(N, rows) > MAX_ORACLE_BASES:
        raise ValueError("too many candidate bases for brute-force enumeration")
    if np.linalg.matrix_rank(A) < rows:
        raise ValueError("constraint rows are linearly dependent")

    tol = 1e-9
    any_feasible = False
    best: tuple[float, tuple[int, ...], FloatArray, FloatArray] | None = None
    combos = itertools.combinations(range(N), rows)
    while True:
        chunk = list(itertools.islice(combos, 20000))
        if not chunk:
            break
        idx = np.array(chunk)
        Bs = A[:, idx].transpose(1, 0, 2)  # (K, rows, rows)
        s = np.linalg.svd(Bs, compute_uv=False)
        ok = s[:, -1] > 1e-10 * np.maximum(s[:, 0], 1.0)
        if not np.any(ok):
            continue
        idx, Bs = idx[ok], Bs[ok]
        xB = np.linalg.solve(Bs, np.broadcast_to(b, (len(idx), rows))[..., None])[..., 0]
        feas = np.all(xB >= -tol * max(1.0, float(np.abs(b).max())), axis=1)
        if not np.any(feas):
            continue
        any_feasible = True
        idx, Bs, xB = idx[feas], Bs[feas], xB[feas]
        cB = c[idx]
        y = np.linalg.solve(Bs.transpose(0, 2, 1), cB[..., None])[..., 0]
        red = c[None, :] - y @ A
        dual_ok = np.all(red >= -tol * max(1.0, float(np.abs(c).max())), axis=1)
        for k in np.flatnonzero(dual_ok):
            obj = float(cB[k] @ xB[k])
            if best is None or obj < best[0] - 1e-12:
                best = (obj, tuple(int(v) for v in idx[k]), xB[k], y[k])
            break  # lexicographically first optimal basis in this chunk
        if best is not None:
            break
    if best is None:
        return LpSolution(LpStatus.UNBOUNDED if any_feasible else LpStatus.INFEASIBLE)
    _, basis, xB, y = best
    x = np.zeros(N)
    x[list(basis)] = np.maximum(xB, 0.0)
    lam = y * sf.sign
    z = x[: prob.n_vars]
    return LpSolution(
        LpStatus.OPTIMAL, z, -lam[: prob.n_ub], lam[prob.n_ub:], float(prob.c @ z), basis, 0
    )
