"""Chores Fisher market: instances, dual points, allocations and the objectives
evaluated on them.

Conventions used across the package:

* ``d`` is the ``n x m`` disutility matrix (agents x chores), strictly positive.
* ``b`` holds the earning requirements (budgets).
* A dual point is a pair ``(beta, prices)`` of the redundant chores dual; it is
  feasible when ``prices[j] <= beta[i] * d[i, j]`` and ``sum(prices) == sum(b)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]

#: absolute tolerance on dual constraints, scaled by ``max(1, sum(b))``
FEAS_TOL = 1e-9

#: Relative convexity constant for the Itakura-Saito quadratic lower bound.
IS_QUAD_C = math.sqrt(3.0) - 1.0 - 0.5 * math.log(3.0)


class MarketError(ValueError):
    """Invalid market data or an evaluation outside an objective's domain."""


def _frozen(a: Any, ndim: int, name: str) -> FloatArray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise MarketError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MarketError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChoresInstance:
    """A chores market with ``n`` agents and ``m`` divisible chores.

    ``meta`` carries provenance (distribution, seed, ...) and is ignored by
    every algorithm.
    """

    d: FloatArray
    b: FloatArray
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        d = _frozen(self.d, 2, "disutilities")
        b = _frozen(self.b, 1, "budgets")
        n, m = d.shape
        if n < 1 or m < 1:
            raise MarketError("need at least one agent and one chore")
        if b.shape != (n,):
            raise MarketError(f"budgets have shape {b.shape}, expected ({n},)")
        if np.any(d <= 0):
            raise MarketError("disutilities must be strictly positive")
        if np.any(b <= 0):
            raise MarketError("budgets must be strictly positive")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "b", b)

    @classmethod
    def ceei(cls, d: Any, **meta: Any) -> "ChoresInstance":
        """Instance with unit budgets for every agent."""
        d = np.asarray(d, dtype=np.float64)
        return cls(d, np.ones(d.shape[0]), dict(meta))

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def m(self) -> int:
        return self.d.shape[1]

    @property
    def total_budget(self) -> float:
        return float(self.b.sum())

    @property
    def feas_tol(self) -> float:
        return FEAS_TOL * max(1.0, self.total_budget)


@dataclass(frozen=True)
class DualPoint:
    """``(beta, prices)``: inverse bang-per-buck per agent, price per chore."""

    beta: FloatArray
    prices: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", _frozen(self.beta, 1, "beta"))
        object.__setattr__(self, "prices", _frozen(self.prices, 1, "prices"))

    def violation(self, inst: ChoresInstance) -> float:
        """Largest violation of the redundant-dual constraints (0 if feasible)."""
        _check_dims(inst, beta=self.beta, prices=self.prices)
        over = self.prices[None, :] - self.beta[:, None] * inst.d
        worst = max(float(over.max()), 0.0, float(-self.prices.min()), float(-self.beta.min()))
        return max(worst, abs(float(self.prices.sum()) - inst.total_budget))

    def is_feasible(self, inst: ChoresInstance, tol: float | None = None) -> bool:
        tol = inst.feas_tol if tol is None else tol
        return self.violation(inst) <= tol


@dataclass(frozen=True)
class EquilibriumCandidate:
    """A price vector and an allocation ``x[i, j]`` of chores to agents."""

    prices: FloatArray
    allocation: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "prices", _frozen(self.prices, 1, "prices"))
        x = _frozen(self.allocation, 2, "allocation")
        if np.any(x < 0):
            raise MarketError("allocation must be nonnegative")
        object.__setattr__(self, "allocation", x)

    def to_dict(self) -> dict[str, Any]:
        return {"prices": self.prices.tolist(), "allocation": self.allocation.tolist()}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "EquilibriumCandidate":
        return cls(np.asarray(doc["prices"], float), np.asarray(doc["allocation"], float))


def _check_dims(inst: ChoresInstance, *, beta: Any = None, prices: Any = None, x: Any = None) -> None:
    if beta is not None and np.shape(beta) != (inst.n,):
        raise MarketError(f"beta has shape {np.shape(beta)}, expected ({inst.n},)")
    if prices is not None and np.shape(prices) != (inst.m,):
        raise MarketError(f"prices have shape {np.shape(prices)}, expected ({inst.m},)")
    if x is not None and np.shape(x) != (inst.n, inst.m):
        raise MarketError(f"allocation has shape {np.shape(x)}, expected {(inst.n, inst.m)}")


def dual_objective(inst: ChoresInstance, y: DualPoint) -> float:
    """``-sum_i b_i log beta_i``; the constant price sum is dropped."""
    _check_dims(inst, beta=y.beta, prices=y.prices)
    if np.any(y.beta <= 0):
        raise MarketError("beta must be strictly positive")
    return float(-(inst.b @ np.log(y.beta)))


def nash_disutility_log(inst: ChoresInstance, x: Any) -> float:
    """Budget-weighted log Nash disutility ``sum_i b_i log <d_i, x_i>``.

    Raises:
        MarketError: if some agent's disutility is zero (a pole of the objective).
    """
    x = np.asarray(x, dtype=np.float64)
    _check_dims(inst, x=x)
    dis = (inst.d * x).sum(axis=1)
    if np.any(dis <= 0):
        bad = int(np.flatnonzero(dis <= 0)[0])
        raise MarketError(f"agent {bad} has zero disutility (pole)")
    return float(inst.b @ np.log(dis))


def induced_beta(inst: ChoresInstance, prices: Any) -> FloatArray:
    """Smallest feasible ``beta`` for ``prices``: ``max_j prices_j / d_ij``."""
    prices = np.asarray(prices, dtype=np.float64)
    _check_dims(inst, prices=prices)
    if np.any(prices < 0):
        raise MarketError("prices must be nonnegative")
    if not np.any(prices > 0):
        raise MarketError("at least one price must be positive")
    return (prices[None, :] / inst.d).max(axis=1)


def itakura_saito(y: Any, x: Any) -> float:
    """Itakura-Saito divergence ``sum(-log(y/x) + y/x - 1)``."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise MarketError(f"shape mismatch {y.shape} vs {x.shape}")
    if np.any(y <= 0) or np.any(x <= 0):
        raise MarketError("Itakura-Saito needs strictly positive vectors")
    r = y / x
    # log1p keeps precision when r is close to 1
    return float(np.sum((r - 1.0) - np.log1p(r - 1.0)))


def dual_objective_upper_bound(inst: ChoresInstance) -> float:
    """Upper bound on the redundant-dual objective *including* the price sum."""
    bsum = inst.total_budget
    return bsum * (1.0 - math.log(bsum) + math.log(inst.m * float(inst.d.max())))


def primal_objective_ext(inst: ChoresInstance, x: Any) -> float:
    """Same as :func:`nash_disutility_log`, with ``u_i = <d_i, x_i>``."""
    return nash_disutility_log(inst, x)


def dual_objective_ext(inst: ChoresInstance, y: DualPoint) -> float:
    """Dual objective with the constants that make it match the primal at KKT points."""
    b = inst.b
    return float(y.prices.sum()) + dual_objective(inst, y) + float(b @ np.log(b) - b.sum())


# -- serialization ---------------------------------------------------------

def _fmt(v: float) -> str:
    if not math.isfinite(v):
        raise MarketError(f"cannot serialize non-finite value {v}")
    return format(float(v), ".17g")


def dumps_json(obj: Any, indent: int | None = 1) -> str:
    """JSON with every float written at 17 significant digits."""

    def enc(o: Any, level: int) -> str:
        pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
        end = "" if indent is None else "\n" + " " * (indent * level)
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if o is None:
            return "null"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt(float(o))
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{" + pad + ("," + pad).join(items) + end + "}"
        if isinstance(o, (list, tuple)):
            # numeric rows stay on one line
            if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[" + pad + ("," + pad).join(enc(v, level + 1) for v in o) + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0)


def instance_to_dict(inst: ChoresInstance) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "n": inst.n,
        "m": inst.m,
        "budgets": inst.b.tolist(),
        "disutilities": inst.d.tolist(),
    }
    if inst.meta:
        doc["meta"] = dict(inst.meta)
    return doc


def instance_from_dict(doc: dict[str, Any]) -> ChoresInstance:
    try:
        d = np.asarray(doc["disutilities"], dtype=np.float64)
        b = np.asarray(doc["budgets"], dtype=np.float64)
    except KeyError as e:
        raise MarketError(f"instance document is missing {e}") from None
    if d.ndim != 2:
        raise MarketError("disutilities must be a row-major matrix")
    n, m = doc.get("n", d.shape[0]), doc.get("m", d.shape[1])
    if (n, m) != d.shape:
        raise MarketError(f"declared size {(n, m)} does not match matrix {d.shape}")
    return ChoresInstance(d, b, dict(doc.get("meta", {})))


def load_instance(path: str | Path) -> ChoresInstance:
    """Read an instance from ``.json`` or a headerless ``.csv`` matrix (unit budgets)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".csv":
        return instance_from_csv(text, name=path.stem)
    return instance_from_dict(json.loads(text))


def instance_from_csv(text: str, **meta: Any) -> ChoresInstance:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    try:
        d = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise MarketError(f"bad CSV matrix: {e}") from None
    return ChoresInstance.ceei(d, **meta)


def save_instance(inst: ChoresInstance, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        lines = [",".join(_fmt(v) for v in row) for row in inst.d]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        path.write_text(dumps_json(instance_to_dict(inst)) + "\n", encoding="utf-8")
