"""Sparse grid combination technique on top of the full-grid solver."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

from .market import MarketCurve, SwaptionSpec, TenorStructure
from .model import Measure, SabrLmmParams
from .pde import (GridFunction, GridSpec, SolverConfig, SolveStats, SpaceDomain,
                  multilinear_interpolate, pricing_setup, solve_full_grid)

MultiIndex = tuple  # tuple[int, ...]


def enumerate_level(d: int, s: int) -> list[MultiIndex]:
    """All ``l`` in ``N_0^d`` with ``|l|_1 = s``, lexicographically ordered."""
    if d < 1 or s < 0:
        raise ValueError("need d >= 1 and s >= 0")
    if d == 1:
        return [(s,)]
    return [(first,) + rest for first in range(s + 1) for rest in enumerate_level(d - 1, s - first)]


@dataclass(frozen=True)
class CombinationPlan:
    level: int
    dim: int
    entries: tuple[tuple[MultiIndex, int], ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def combination_plan(n: int, d: int) -> CombinationPlan:
    """Grids ``|l|_1 = n - q`` weighted by ``(-1)^q binom(d-1, q)`` for ``q = 0..d-1``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    if n < d - 1:
        raise ValueError(f"sparse level {n} is below d-1={d - 1}: under-resolved combination")
    entries = []
    for q in range(d):
        weight = (-1) ** q * math.comb(d - 1, q)
        entries.extend((l, weight) for l in enumerate_level(d, n - q))
    return CombinationPlan(n, d, tuple(entries))


def _points_with_level(j: int) -> int:
    # nodes of a dyadic 1-d grid that first appear at level j
    return 2 if j == 0 else 2 ** (j - 1)


def sparse_point_count(n: int, d: int) -> int:
    """Exact number of distinct nodes in the union of all grids with ``|l|_1 <= n``.

    A node belongs to the union iff the sum of the levels at which each of its
    coordinates first appears is at most ``n``.
    """
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    # ways[s] = number of nodes whose per-coordinate first levels sum to s
    ways = [1] + [0] * n
    for _ in range(d):
        nxt = [0] * (n + 1)
        for s, w in enumerate(ways):
            if w:
                for j in range(n - s + 1):
                    nxt[s + j] += w * _points_with_level(j)
        ways = nxt
    return sum(ways)


def full_point_count(levels) -> int:
    return math.prod(2**l + 1 for l in levels)


@dataclass
class GridResult:
    levels: MultiIndex
    weight: int
    value: float
    n_points: int
    seconds: float
    sweeps: int


@dataclass
class SparseResult:
    level: int
    dim: int
    price_bp: float
    grid_points: int
    grids: list[GridResult] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def subgrid_points(self) -> int:
        return sum(g.n_points for g in self.grids)


class SubgridFailure(RuntimeError):
    def __init__(self, failures):
        lines = "; ".join(f"l={levels}: {exc}" for levels, exc in failures)
        super().__init__(f"{len(failures)} subgrid solve(s) failed: {lines}")
        self.failures = failures


def combine(plan: CombinationPlan, evaluate, workers: int = 1) -> tuple[float, list[GridResult]]:
    """Weighted sum of ``evaluate(levels)`` over the plan.

    ``evaluate`` returns ``(value, n_points, sweeps)``.  Grids are scheduled
    largest first; results are collected back into plan order and summed
    exactly, so the total does not depend on the number of workers.
    """
    entries = list(plan)
    order = sorted(range(len(entries)), key=lambda i: -full_point_count(entries[i][0]))

    def run(i):
        levels, weight = entries[i]
        t0 = time.perf_counter()
        try:
            value, n_points, sweeps = evaluate(levels)
        except Exception as exc:  # collected and re-raised as one report
            return i, exc
        return i, GridResult(levels, weight, value, n_points, time.perf_counter() - t0, sweeps)

    if workers <= 1:
        done = [run(i) for i in order]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(run, order))
    results = dict(done)
    failures = [(entries[i][0], r) for i, r in sorted(results.items()) if isinstance(r, Exception)]
    if failures:
        raise SubgridFailure(failures)
    grids = [results[i] for i in range(len(entries))]
    # correctly rounded, so cancellation between the +/- slices costs nothing
    return math.fsum(g.weight * g.value for g in grids), grids


def price_sparse(n: int, swaption: SwaptionSpec, curve: MarketCurve, params: SabrLmmParams,
                 measure: Measure, config: SolverConfig = SolverConfig(), workers: int = 1, *,
                 tenor: TenorStructure | None = None, f_max: float = 0.1,
                 v_max: float = 3.5, numeraire: str = "auto") -> SparseResult:
    """Combination-technique price in basis points, with per-grid diagnostics."""
    start = time.perf_counter()
    tenor = tenor or TenorStructure.annual(len(curve.forwards0))
    setup = pricing_setup(swaption, curve, tenor, params, measure, numeraire)
    domain = setup.domain(f_max, v_max)
    plan = combination_plan(n, domain.dim)

    def evaluate(levels):
        spec = GridSpec(levels, domain)
        stats = SolveStats()
        U = solve_full_grid(spec, setup.payoff(spec), setup.problem, config, stats)
        return multilinear_interpolate(U, setup.spot), spec.n_points, stats.sweeps

    value, grids = combine(plan, evaluate, workers)
    return SparseResult(n, domain.dim, setup.price_bp(value), sparse_point_count(n, domain.dim),
                        grids, time.perf_counter() - start)


def combine_samples(n: int, domain: SpaceDomain, fn, point, workers: int = 1) -> float:
    """Combined interpolated value at ``point`` when each subgrid holds samples of ``fn``."""
    plan = combination_plan(n, domain.dim)

    def evaluate(levels):
        spec = GridSpec(levels, domain)
        return multilinear_interpolate(GridFunction.sample(spec, fn), point), spec.n_points, 0

    value, _ = combine(plan, evaluate, workers)
    return value
