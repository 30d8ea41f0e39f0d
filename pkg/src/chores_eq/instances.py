"""Seeded instance generators and named fixtures.

Random draws use ``numpy.random.Generator(numpy.random.Philox(seed))``, a
counter-based 64-bit generator, so instances are reproducible bit for bit
from ``(dist, n, m, seed)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import stats

from .market import ChoresInstance, EquilibriumCandidate, FloatArray, MarketError

TRUNC_LOW = 1e-3
TRUNC_HIGH = 10.0
RANDINT_HIGH = 1000
NOISE_FLOOR = 1e-6


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _positive(draw: Callable[[np.random.Generator, tuple[int, ...]], FloatArray]):
    """Wrap ``draw`` so exact zeros are redrawn."""

    def sample(rng: np.random.Generator, shape: tuple[int, ...]) -> FloatArray:
        out = draw(rng, shape)
        while np.any(out <= 0):
            bad = out <= 0
            out[bad] = draw(rng, (int(bad.sum()),))
        return out

    return sample


DISTS: dict[str, Callable[[np.random.Generator, tuple[int, ...]], FloatArray]] = {
    "uniform01": _positive(lambda rng, s: rng.random(s)),
    "lognormal": _positive(lambda rng, s: np.exp(rng.standard_normal(s))),
    "truncnormal": _positive(lambda rng, s: stats.truncnorm.ppf(rng.random(s), TRUNC_LOW, TRUNC_HIGH)),
    "exponential": _positive(lambda rng, s: rng.exponential(1.0, s)),
    "randint": lambda rng, s: rng.integers(1, RANDINT_HIGH + 1, s).astype(np.float64),
}


@dataclass(frozen=True)
class GenSpec:
    """Random instance spec; ``m`` defaults to ``n`` and budgets to 1."""

    n: int
    dist: str = "uniform01"
    seed: int = 0
    m: int | None = None
    budgets: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.n < 1 or (self.m is not None and self.m < 1):
            raise MarketError("instance size must be positive")
        if self.dist not in DISTS:
            raise MarketError(f"unknown distribution {self.dist!r}; choose from {sorted(DISTS)}")
        if self.budgets is not None and len(self.budgets) != self.n:
            raise MarketError(f"expected {self.n} budgets, got {len(self.budgets)}")


def generate(spec: GenSpec) -> ChoresInstance:
    m = spec.n if spec.m is None else spec.m
    d = DISTS[spec.dist](rng_for(spec.seed), (spec.n, m))
    b = np.ones(spec.n) if spec.budgets is None else np.asarray(spec.budgets, dtype=np.float64)
    return ChoresInstance(d, b, {"dist": spec.dist, "seed": spec.seed})


# -- fixtures ----------------------------------------------------------------------

def fig1() -> ChoresInstance:
    """Two agents, one chore: ``d = [[2], [1]]``."""
    return ChoresInstance.ceei([[2.0], [1.0]], name="fig1")


def fig2(seed: int = 0) -> ChoresInstance:
    """Two agents, eight chores, uniform disutilities."""
    inst = generate(GenSpec(n=2, m=8, dist="uniform01", seed=seed))
    return ChoresInstance(inst.d, inst.b, {"name": "fig2", "seed": seed})


def appendix_b(M: float = 100.0, eps: float = 0.01) -> ChoresInstance:
    """``d = [[1, M], [1 - eps, 1 + eps]]``: an approximate equilibrium far from the exact one."""
    if not M > 1 or not 0 <= eps < 1:
        raise MarketError("need M > 1 and 0 <= eps < 1")
    return ChoresInstance.ceei([[1.0, M], [1.0 - eps, 1.0 + eps]], name="appendixB", M=M, eps=eps)


def appendix_b_equilibrium(M: float = 100.0, eps: float = 0.01) -> EquilibriumCandidate:
    """The unique equal-income equilibrium of :func:`appendix_b`.

    Agent 1 takes all of chore 1 and the fraction ``(M-1)/(2M)`` of chore 2.
    """
    p = np.array([2.0 / (M + 1.0), 2.0 * M / (M + 1.0)])
    x = np.array([[1.0, (M - 1.0) / (2.0 * M)], [0.0, (M + 1.0) / (2.0 * M)]])
    return EquilibriumCandidate(p, x)


def appendix_b_beta(M: float = 100.0, eps: float = 0.01) -> FloatArray:
    return np.array([2.0 / (M + 1.0), 2.0 * M / ((M + 1.0) * (1.0 + eps))])


def appendix_b_approximate(M: float = 100.0, eps: float = 0.01) -> EquilibriumCandidate:
    """Near-uniform prices with each agent keeping one chore."""
    return EquilibriumCandidate(np.array([1.0 - eps, 1.0 + eps]), np.array([[1.0 - eps, 0.0], [0.0, 1.0]]))


FIXTURES: dict[str, Callable[..., ChoresInstance]] = {
    "fig1": fig1,
    "fig2": fig2,
    "appendixB": appendix_b,
}


def fixtures() -> dict[str, ChoresInstance]:
    """Every named fixture at its default parameters."""
    return {name: make() for name, make in FIXTURES.items()}


# -- bidding data -----------------------------------------------------------------------

LABELS = ("yes", "maybe", "no_response", "no", "conflict")
DEFAULT_MAPPING: dict[str, float] = {"yes": 1.0, "maybe": 3.0, "no_response": 5.0, "no": 7.0, "conflict": 4000.0}


@dataclass(frozen=True)
class BidSpec:
    """Subsample ``members`` reviewers and ``papers`` papers from a bidding matrix."""

    members: int
    papers: int
    seed: int = 0
    noise_sd: float = 0.0
    mapping: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MAPPING))

    def __post_init__(self) -> None:
        if self.members < 1 or self.papers < 1:
            raise MarketError("subsample sizes must be positive")
        if self.noise_sd < 0:
            raise MarketError("noise_sd must be nonnegative")
        missing = set(LABELS) - set(self.mapping)
        if missing:
            raise MarketError(f"mapping lacks labels {sorted(missing)}")
        if any(v <= 0 for v in self.mapping.values()):
            raise MarketError("mapping values must be positive")


def read_bidding_csv(source: str | Path | io.TextIOBase) -> np.ndarray:
    """Members x papers matrix of ordinal labels (no header)."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, io.TextIOBase):
        text = source.read()
    else:
        text = str(source)
    rows = [[c.strip().lower() for c in r] for r in csv.reader(io.StringIO(text)) if r]
    if not rows or len({len(r) for r in rows}) != 1:
        raise MarketError("bidding CSV must be a non-empty rectangular matrix")
    labels = np.array(rows, dtype=object)
    bad = set(labels.ravel()) - set(LABELS)
    if bad:
        raise MarketError(f"unknown bidding labels {sorted(bad)}")
    return labels


def subsample(labels: np.ndarray, spec: BidSpec) -> ChoresInstance:
    """Pick an anchor paper uniformly, keep the papers nearest to it, then the
    reviewers with the most non-conflict responses on those papers.

    Paper similarity is Euclidean distance between mapped response columns;
    ties break toward the lower index. Noise is added after mapping and the
    result is clamped at ``1e-6``.
    """
    labels = np.asarray(labels, dtype=object)
    n_members, n_papers = labels.shape
    if spec.members > n_members or spec.papers > n_papers:
        raise MarketError(f"cannot take {spec.members}x{spec.papers} from a {n_members}x{n_papers} matrix")
    values = np.vectorize(spec.mapping.__getitem__, otypes=[float])(labels)
    rng = rng_for(spec.seed)
    anchor = int(rng.integers(n_papers))
    dist = np.linalg.norm(values - values[:, [anchor]], axis=0)
    dist[anchor] = -1.0  # the anchor always comes first
    papers = np.sort(np.argsort(dist, kind="stable")[: spec.papers])
    ok = (labels[:, papers] != "conflict").sum(axis=1)
    members = np.sort(np.argsort(-ok, kind="stable")[: spec.members])
    d = values[np.ix_(members, papers)]
    if spec.noise_sd > 0:
        d = np.maximum(d + rng.normal(0.0, spec.noise_sd, d.shape), NOISE_FLOOR)
    meta = {"source": "bidding", "seed": spec.seed, "noise_sd": spec.noise_sd}
    return ChoresInstance.ceei(d, **meta)


def subsample_bidding(labels: np.ndarray, n: int, seed: int = 0, noise_sd: float = 0.0) -> ChoresInstance:
    """Square ``n x n`` subsample; see :func:`subsample`."""
    return subsample(labels, BidSpec(members=n, papers=n, seed=seed, noise_sd=noise_sd))


def describe(inst: ChoresInstance) -> dict[str, Any]:
    return {"n": inst.n, "m": inst.m, **inst.meta}
