"""Certificates for (approximate) competitive equilibria and KKT points.

All epsilon values are the *smallest* epsilon for which the corresponding
condition holds; thresholds are applied by callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .market import (
    ChoresInstance,
    DualPoint,
    EquilibriumCandidate,
    FloatArray,
    MarketError,
    _check_dims,
    dual_objective_ext,
    nash_disutility_log,
)

EXACT_TOL = 1e-6
APPROX_TOL = 1e-2


def _two_sided_eps(value: FloatArray, target: FloatArray) -> FloatArray:
    """Smallest eps with ``(1-eps)*target <= value <= target/(1-eps)``."""
    value = np.asarray(value, dtype=np.float64)
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), value.shape)
    out = np.zeros_like(value)
    low = value < target
    high = value > target
    out[low] = 1.0 - value[low] / target[low]
    out[high] = 1.0 - target[high] / value[high]
    return out


@dataclass(frozen=True)
class Certificate:
    """How far a (prices, allocation) pair is from a competitive equilibrium."""

    eps_earning: float
    eps_optimality: float
    eps_supply: float

    @property
    def max_eps(self) -> float:
        return max(self.eps_earning, self.eps_optimality, self.eps_supply)

    def is_exact(self, tol: float = EXACT_TOL) -> bool:
        return self.max_eps <= tol

    def is_approx(self, eps: float) -> bool:
        """Every condition relaxed to ``eps``."""
        return self.max_eps <= eps

    def is_strongly_approx(self, eps: float = APPROX_TOL, exact_tol: float = EXACT_TOL) -> bool:
        """Only the earning condition relaxed; the other two hold to ``exact_tol``."""
        return (
            self.eps_earning <= eps
            and self.eps_optimality <= exact_tol
            and self.eps_supply <= exact_tol
        )

    def to_dict(self) -> dict[str, float]:
        return {
            "eps_earning": self.eps_earning,
            "eps_optimality": self.eps_optimality,
            "eps_supply": self.eps_supply,
        }


def certify_ce(inst: ChoresInstance, cand: EquilibriumCandidate) -> Certificate:
    """Measure ``cand`` against the three equilibrium conditions.

    The optimality condition uses the closed-form best response: an agent
    earning ``E`` at least needs disutility ``E * min_j d_ij / p_j`` over
    chores with positive price.
    """
    p, x = cand.prices, cand.allocation
    _check_dims(inst, prices=p, x=x)
    if np.any(p < 0) or not np.any(p > 0):
        raise MarketError("prices must be nonnegative with at least one positive entry")

    earn = x @ p
    eps_earn = _two_sided_eps(earn, inst.b)

    dis = (inst.d * x).sum(axis=1)
    pos = p > 0
    cheapest = (inst.d[:, pos] / p[pos]).min(axis=1)
    eps_opt = np.zeros(inst.n)
    busy = dis > 0
    eps_opt[busy] = np.maximum(0.0, 1.0 - earn[busy] * cheapest[busy] / dis[busy])

    supply = x.sum(axis=0)
    eps_sup = _two_sided_eps(supply, 1.0)
    return Certificate(float(eps_earn.max()), float(eps_opt.max()), float(eps_sup.max()))


# -- KKT checks ------------------------------------------------------------------

@dataclass(frozen=True)
class KktWitness:
    """Primal point ``(beta, prices)`` with multipliers ``x`` (per ``p_j <= d_ij beta_i``)
    and ``mu`` (per the price-sum constraint)."""

    beta: FloatArray
    prices: FloatArray
    x: FloatArray
    mu: float = 0.0

    def __post_init__(self) -> None:
        for name in ("beta", "prices", "x"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def dual_point(self) -> DualPoint:
        return DualPoint(self.beta, self.prices)

    def candidate(self) -> EquilibriumCandidate:
        return EquilibriumCandidate(self.prices, np.maximum(self.x, 0.0))

    def to_dict(self) -> dict[str, Any]:
        return {"beta": self.beta.tolist(), "prices": self.prices.tolist(), "x": self.x.tolist(), "mu": self.mu}


@dataclass(frozen=True)
class KktReport:
    residuals: dict[str, float]
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "passed", self.max_residual <= self.tol)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def worst(self) -> str:
        return max(self.residuals, key=self.residuals.__getitem__)


def _common_residuals(inst: ChoresInstance, w: KktWitness) -> dict[str, float]:
    _check_dims(inst, beta=w.beta, prices=w.prices, x=w.x)
    beta, p, x, d = w.beta, w.prices, w.x, inst.d
    if np.any(beta <= 0):
        return {"nonnegativity": float("inf")}
    cap = d * beta[:, None]  # d_ij * beta_i
    need = inst.b / beta  # required disutility b_i / beta_i
    dis = (d * x).sum(axis=1)
    return {
        "nonnegativity": max(0.0, float(-p.min()), float(-x.min())),
        "price_feasibility": float(np.max((p[None, :] - cap) / cap, initial=0.0)),
        "bundle_complementarity": float(np.max(np.abs(x) * np.abs(cap - p[None, :]) / cap)),
        "disutility": float(np.max(np.maximum(need - dis, 0.0) / need)),
        "disutility_complementarity": float(np.max(np.abs(dis - need) / need)),
    }


def check_kkt_dual(inst: ChoresInstance, w: KktWitness, tol: float = EXACT_TOL) -> KktReport:
    """KKT conditions of the chores dual without the price-sum constraint."""
    res = _common_residuals(inst, w)
    if "price_feasibility" in res:
        p, s = w.prices, w.x.sum(axis=0)
        pbar = max(float(p.mean()), np.finfo(float).tiny)
        res["clearing"] = float(np.max(np.maximum(1.0 - s, 0.0)))
        res["clearing_complementarity"] = float(np.max(p / pbar * np.abs(s - 1.0)))
    return KktReport(res, tol)


def check_kkt_redundant(inst: ChoresInstance, w: KktWitness, tol: float = EXACT_TOL) -> KktReport:
    """KKT conditions of the redundant chores dual, plus ``|mu| <= tol``.

    At every KKT point the multiplier of the price-sum constraint is zero,
    so a witness carrying a nonzero ``mu`` is rejected even when the shifted
    clearing condition holds.
    """
    res = _common_residuals(inst, w)
    if "price_feasibility" in res:
        p, s = w.prices, w.x.sum(axis=0)
        pbar = max(float(p.mean()), np.finfo(float).tiny)
        bsum = inst.total_budget
        res["budget_balance"] = abs(float(p.sum()) - bsum) / bsum
        res["clearing"] = float(np.max(np.maximum(1.0 - s - w.mu, 0.0)))
        res["clearing_complementarity"] = float(np.max(p / pbar * np.abs(s + w.mu - 1.0)))
        res["mu"] = abs(w.mu)
    return KktReport(res, tol)


def kkt_duality_gap(inst: ChoresInstance, w: KktWitness) -> float:
    """Difference between the log-Nash primal objective at ``x`` and the
    extended dual objective at ``(beta, prices)``; zero at KKT points.

    Raises:
        MarketError: an agent has zero disutility under ``w.x`` or beta is not positive.
    """
    primal = nash_disutility_log(inst, w.x)
    if np.any(w.beta <= 0):
        raise MarketError("beta must be strictly positive")
    return abs(primal - dual_objective_ext(inst, w.dual_point))
