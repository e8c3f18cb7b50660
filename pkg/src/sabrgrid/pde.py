"""Full-grid finite differences for the Mercurio & Morini SABR/LMM pricing PDE.

State ordering is ``(F_{i_1}, ..., F_{i_k}, V)`` with the volatility last, and
grid values are stored flat in row-major (C) order, so the volatility index
runs fastest.  The spatial operator is assembled once per grid as a sparse
matrix holding ``dt * W`` (coefficients do not depend on time); each theta
step then solves ``(I - theta L) U^m = U^{m+1} + (1 - theta) L U^{m+1}``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import splu

from . import market
from .market import BP, MarketCurve, SwaptionSpec, TenorStructure
from .model import Measure, SabrLmmParams, correlation, deflating_bond, drift, state_indices

INTERIOR, DIRICHLET, V_MIN, V_MAX = 0, 1, 2, 3


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, update_norm: float):
        super().__init__(
            f"Gauss-Seidel did not converge in {iterations} sweeps (last update {update_norm:.3e})"
        )
        self.iterations = iterations
        self.update_norm = update_norm


@dataclass(frozen=True)
class SpaceDomain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(x) for x in self.lower))
        object.__setattr__(self, "upper", tuple(float(x) for x in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("domain bounds must have equal length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("domain needs lower < upper in every dimension")

    @classmethod
    def default(cls, n_forwards: int, f_max: float = 0.1, v_max: float = 3.5) -> "SpaceDomain":
        return cls((0.0,) * (n_forwards + 1), (f_max,) * n_forwards + (v_max,))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))


@dataclass(frozen=True)
class GridSpec:
    """Anisotropic grid with ``2**l_k + 1`` nodes in dimension ``k``."""

    levels: tuple[int, ...]
    domain: SpaceDomain

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(l) for l in self.levels))
        if len(self.levels) != self.domain.dim:
            raise ValueError("multi-index and domain dimensions differ")
        if any(l < 0 for l in self.levels):
            raise ValueError("levels must be non-negative")

    @classmethod
    def isotropic(cls, level: int, domain: SpaceDomain) -> "GridSpec":
        return cls((level,) * domain.dim, domain)

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(2**l + 1 for l in self.levels)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(c / 2**l for c, l in zip(self.domain.lengths, self.levels))

    @property
    def n_points(self) -> int:
        return math.prod(self.shape)

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, hi, n)
            for lo, hi, n in zip(self.domain.lower, self.domain.upper, self.shape)
        ]

    def mesh(self) -> list[np.ndarray]:
        """Flat coordinate arrays of every node, one per dimension."""
        return [m.ravel() for m in np.meshgrid(*self.axes(), indexing="ij")]


@dataclass
class GridFunction:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float).ravel()
        if self.values.size != self.spec.n_points:
            raise ValueError("value count does not match the grid")

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)

    @classmethod
    def sample(cls, spec: GridSpec, fn) -> "GridFunction":
        """Evaluate ``fn(*coordinates)`` at every node."""
        return cls(spec, np.broadcast_to(fn(*spec.mesh()), (spec.n_points,)))


@dataclass(frozen=True)
class SolverConfig:
    theta: float = 0.5
    time_steps: int = 256
    gs_tolerance: float = 1e-6
    gs_max_iterations: int = 10_000
    method: str = "gauss-seidel"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta outside [0,1]")
        if self.time_steps < 1:
            raise ValueError("time_steps must be positive")
        if self.gs_tolerance <= 0 or self.gs_max_iterations < 1:
            raise ValueError("Gauss-Seidel tolerance and iteration cap must be positive")
        if self.method not in ("gauss-seidel", "direct"):
            raise ValueError(f"unknown linear solver {self.method!r}")


@dataclass(frozen=True)
class PdeProblem:
    """What the PDE needs to know about the model: which forwards are state variables."""

    tenor: TenorStructure
    params: SabrLmmParams
    measure: Measure
    forward_indices: tuple[int, ...]
    maturity: float

    @property
    def n_forwards(self) -> int:
        return len(self.forward_indices)


@dataclass
class PdeCoefficients:
    """Scheme coefficients; scalars at one node or arrays over all nodes.

    ``b``, ``r`` and ``a`` are indexed by state forward position, ``psi`` by
    position pairs ``(p, q)`` with ``p < q``.
    """

    d: object
    b: list
    r: list
    a: list
    psi: dict = field(default_factory=dict)


def coefficients_at(F, V, problem: PdeProblem, dt: float, spec: GridSpec) -> PdeCoefficients:
    """Coefficients ``d, b_i, r_i, a_i, psi_ij`` at state ``(F, V)``.

    ``F`` lists the state forwards in state order.  Works elementwise when the
    entries of ``F`` and ``V`` are arrays.
    """
    params, tenor = problem.params, problem.tenor
    idx = problem.forward_indices
    k = len(idx)
    *hf, hv = spec.h
    V = np.asarray(V, dtype=float)
    V2 = V * V
    beta = params.beta
    Fb = [np.maximum(np.asarray(F[p], dtype=float), 0.0) ** beta for p in range(k)]
    full = {i: F[p] for p, i in enumerate(idx)}
    alpha = [params.alphas[i] for i in idx]
    phi = [params.phis[i] for i in idx]
    sigma = params.sigma

    d = dt * sigma**2 * V2 / (2 * hv**2)
    b = [dt * V2 * alpha[p] ** 2 * Fb[p] ** 2 / (2 * hf[p] ** 2) for p in range(k)]
    r = [
        dt * drift(idx[p], full, V, problem.measure, params, tenor) * Fb[p] / (2 * hf[p])
        for p in range(k)
    ]
    a = [dt * sigma * V2 * phi[p] * alpha[p] * Fb[p] / (4 * hf[p] * hv) for p in range(k)]
    T = tenor.dates
    psi = {
        (p, q): dt * V2 * correlation(params.lam, T[idx[p]], T[idx[q]]) * alpha[p] * alpha[q]
        * Fb[p] * Fb[q] / (4 * hf[p] * hf[q])
        for p in range(k)
        for q in range(p + 1, k)
    }
    return PdeCoefficients(d, b, r, a, psi)


def node_kinds(spec: GridSpec) -> np.ndarray:
    """Classify every node: interior, forward (Dirichlet) boundary, ``V_min`` or ``V_max`` row."""
    idx = np.indices(spec.shape).reshape(spec.dim, -1)
    shape = spec.shape
    kinds = np.full(spec.n_points, INTERIOR, dtype=np.int8)
    v = idx[-1]
    kinds[v == 0] = V_MIN
    kinds[v == shape[-1] - 1] = V_MAX
    for k in range(spec.dim - 1):
        kinds[(idx[k] == 0) | (idx[k] == shape[k] - 1)] = DIRICHLET
    return kinds


def operator_matrix(spec: GridSpec, problem: PdeProblem, dt: float):
    """Sparse ``dt * W`` including the volatility boundary closures.

    Interior rows carry the full stencil, ``V = 0`` rows only the drift
    terms, ``V = V_max`` rows the stencil with the ghost node ``S+1``
    reflected onto ``S-1``.  Dirichlet rows are empty.  Returns the matrix and
    the node kinds.
    """
    n = spec.n_points
    dim = spec.dim
    k = dim - 1
    shape = np.array(spec.shape)
    strides = np.array([int(np.prod(shape[j + 1:])) for j in range(dim)])
    multi = np.indices(spec.shape).reshape(dim, -1)
    *F, V = spec.mesh()
    c = coefficients_at(F, V, problem, dt, spec)
    kinds = node_kinds(spec)
    nodes = np.arange(n)

    rows, cols, vals = [], [], []

    def add(mask, offset, weight):
        """Couple masked nodes to ``node + offset`` with ``weight``; reflect V past V_max."""
        sel = nodes[mask]
        if sel.size == 0:
            return
        w = np.broadcast_to(weight, (n,))[mask]
        target = multi[:, mask] + np.asarray(offset)[:, None]
        vmax = shape[-1] - 1
        over = target[-1] > vmax
        target[-1, over] = 2 * vmax - target[-1, over]
        rows.append(sel)
        cols.append(strides @ target)
        vals.append(w)

    def unit(*pairs):
        o = np.zeros(dim, dtype=int)
        for axis, step in pairs:
            o[axis] += step
        return o

    full = (kinds == INTERIOR) | (kinds == V_MAX)
    vmin = kinds == V_MIN
    sum_b = sum(c.b) if k else 0.0
    add(full, unit(), -2 * c.d - 2 * sum_b)
    if shape[-1] > 1:
        add(full, unit((k, -1)), c.d)
        add(full, unit((k, +1)), c.d)
    for p in range(k):
        add(full, unit((p, -1)), c.b[p] - c.r[p])
        add(full, unit((p, +1)), c.b[p] + c.r[p])
        add(vmin, unit((p, -1)), -c.r[p])
        add(vmin, unit((p, +1)), c.r[p])
        add(full, unit((p, +1), (k, +1)), c.a[p])
        add(full, unit((p, -1), (k, -1)), c.a[p])
        add(full, unit((p, -1), (k, +1)), -c.a[p])
        add(full, unit((p, +1), (k, -1)), -c.a[p])
    for (p, q), psi in c.psi.items():
        add(full, unit((p, +1), (q, +1)), psi)
        add(full, unit((p, -1), (q, -1)), psi)
        add(full, unit((p, -1), (q, +1)), -psi)
        add(full, unit((p, +1), (q, -1)), -psi)

    if rows:
        L = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
    else:
        L = sp.csr_matrix((n, n))
    L.sum_duplicates()
    L.eliminate_zeros()
    return L, kinds


def apply_operator(U: GridFunction, problem: PdeProblem, dt: float) -> GridFunction:
    """``dt * W`` at interior nodes; every boundary node is left at zero."""
    L, kinds = operator_matrix(U.spec, problem, dt)
    out = L @ U.values
    out[kinds != INTERIOR] = 0.0
    return GridFunction(U.spec, out)


@dataclass
class BoundaryRows:
    nodes: np.ndarray
    kinds: np.ndarray
    matrix: sp.csr_matrix
    rhs: np.ndarray


def theta_system(spec: GridSpec, problem: PdeProblem, config: SolverConfig):
    """Implicit matrix ``A = I - theta L`` (identity on Dirichlet rows), ``L`` and node kinds."""
    dt = problem.maturity / config.time_steps
    L, kinds = operator_matrix(spec, problem, dt)
    A = (sp.identity(spec.n_points, format="csr") - config.theta * L).tocsr()
    return A, L, kinds


def explicit_rhs(U_next: np.ndarray, U_terminal: np.ndarray, L, kinds, theta: float) -> np.ndarray:
    rhs = U_next + (1.0 - theta) * (L @ U_next)
    pinned = kinds == DIRICHLET
    rhs[pinned] = U_terminal[pinned]
    return rhs


def apply_boundaries(U_next: GridFunction, U_terminal: GridFunction, problem: PdeProblem,
                     config: SolverConfig) -> BoundaryRows:
    """Rows of the theta system at every boundary node and their right-hand side.

    Forward boundaries pin the value to the terminal condition, ``V = 0`` rows
    keep only the drift terms and ``V = V_max`` rows use the ghost-point
    Neumann closure.
    """
    spec = U_next.spec
    A, L, kinds = theta_system(spec, problem, config)
    rhs = explicit_rhs(U_next.values, U_terminal.values, L, kinds, config.theta)
    nodes = np.flatnonzero(kinds != INTERIOR)
    return BoundaryRows(nodes, kinds[nodes], A[nodes], rhs[nodes])


@njit(cache=True, nogil=True)
def _gs_kernel(indptr, indices, data, diag, rhs, x, tol, max_iter):
    n = rhs.shape[0]
    update = np.inf
    for sweep in range(1, max_iter + 1):
        update = 0.0
        for i in range(n):
            s = rhs[i]
            for kk in range(indptr[i], indptr[i + 1]):
                s -= data[kk] * x[indices[kk]]
            new = s / diag[i]
            delta = abs(new - x[i])
            if delta > update:
                update = delta
            x[i] = new
        if update < tol:
            return sweep, update
    return -max_iter, update


class _GaussSeidel:
    """Splits a CSR matrix once into diagonal and off-diagonal parts."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        diag = A.diagonal()
        if np.any(diag == 0):
            raise ValueError("Gauss-Seidel needs a non-zero diagonal")
        off = (A - sp.diags(diag)).tocsr()
        off.eliminate_zeros()
        off.sort_indices()
        self.indptr = off.indptr.astype(np.int64)
        self.indices = off.indices.astype(np.int64)
        self.data = off.data.astype(float)
        self.diag = diag.astype(float)

    def solve(self, rhs, x, tol, max_iter):
        x = np.array(x, dtype=float)
        sweeps, update = _gs_kernel(self.indptr, self.indices, self.data, self.diag,
                                    np.asarray(rhs, dtype=float), x, tol, max_iter)
        if sweeps < 0:
            raise NonConvergence(-sweeps, update)
        return x, sweeps


def gauss_seidel(A, rhs, guess=None, tol: float = 1e-6, max_iterations: int = 10_000) -> np.ndarray:
    """Solve ``A x = rhs`` by lexicographic Gauss-Seidel sweeps.

    Stops once the max-norm of a sweep's update drops below ``tol``.
    """
    rhs = np.asarray(rhs, dtype=float)
    x0 = np.zeros_like(rhs) if guess is None else guess
    x, _ = _GaussSeidel(A).solve(rhs, x0, tol, max_iterations)
    return x


@dataclass
class SolveStats:
    time_steps: int = 0
    sweeps: int = 0
    max_sweeps: int = 0
    seconds: float = 0.0


def solve_full_grid(spec: GridSpec, payoff: GridFunction, problem: PdeProblem,
                    config: SolverConfig, stats: SolveStats | None = None) -> GridFunction:
    """March the theta scheme from maturity back to ``t = 0``."""
    if spec != payoff.spec:
        raise ValueError("payoff lives on a different grid")
    if not np.all(np.isfinite(payoff.values)):
        raise ValueError("payoff must be finite")
    start = time.perf_counter()
    A, L, kinds = theta_system(spec, problem, config)
    terminal = payoff.values
    U = terminal.copy()
    if config.method == "direct":
        lu = splu(A.tocsc())
        step = lambda rhs, guess: (lu.solve(rhs), 0)  # noqa: E731
    else:
        gs = _GaussSeidel(A)
        step = lambda rhs, guess: gs.solve(rhs, guess, config.gs_tolerance,  # noqa: E731
                                            config.gs_max_iterations)
    for _ in range(config.time_steps):
        rhs = explicit_rhs(U, terminal, L, kinds, config.theta)
        U, sweeps = step(rhs, U)
        if stats is not None:
            stats.sweeps += sweeps
            stats.max_sweeps = max(stats.max_sweeps, sweeps)
    if stats is not None:
        stats.time_steps += config.time_steps
        stats.seconds += time.perf_counter() - start
    return GridFunction(spec, U)


def multilinear_interpolate(U: GridFunction, point) -> float:
    """d-linear interpolation of ``U`` at ``point`` (inclusive domain)."""
    spec = U.spec
    point = np.asarray(point, dtype=float)
    if point.shape != (spec.dim,):
        raise ValueError("point dimension does not match the grid")
    lo, hi = np.array(spec.domain.lower), np.array(spec.domain.upper)
    if np.any(point < lo) or np.any(point > hi):
        raise ValueError(f"point {point.tolist()} outside the grid domain")
    cells = np.array(spec.shape) - 1
    s = (point - lo) / (hi - lo) * cells
    # snap round-off so a point given as a node coordinate hits that node exactly
    near = np.rint(s)
    s = np.where(np.abs(s - near) < 1e-9, near, s)
    base = np.minimum(np.floor(s).astype(int), cells - 1)
    frac = s - base
    grid = U.as_array()
    total = 0.0
    for corner in product((0, 1), repeat=spec.dim):
        w = 1.0
        for k, c in enumerate(corner):
            w *= frac[k] if c else 1.0 - frac[k]
        if w != 0.0:
            total += w * grid[tuple(base + np.array(corner))]
    return float(total)


@dataclass(frozen=True)
class PricingSetup:
    """Everything needed to turn a grid solution into a swaption price."""

    problem: PdeProblem
    swaption: SwaptionSpec
    spot: tuple[float, ...]
    numeraire_index: int
    discount: float

    def domain(self, f_max: float = 0.1, v_max: float = 3.5) -> SpaceDomain:
        return SpaceDomain.default(self.problem.n_forwards, f_max, v_max)

    def payoff(self, spec: GridSpec) -> GridFunction:
        """Relative payoff in basis points; the solver tolerance is absolute in these units."""
        *F, _ = spec.mesh()
        full = {i: F[p] for p, i in enumerate(self.problem.forward_indices)}
        g = market.swaption_payoff(full, self.swaption, self.problem.tenor, self.numeraire_index)
        return GridFunction(spec, np.broadcast_to(g * BP, (spec.n_points,)))

    def price_bp(self, value_at_spot: float) -> float:
        return self.discount * value_at_spot


def pricing_setup(swaption: SwaptionSpec, curve: MarketCurve, tenor: TenorStructure,
                  params: SabrLmmParams, measure: Measure, numeraire: str = "auto") -> PricingSetup:
    swaption.check_tenor(tenor)
    curve.check_tenor(tenor)
    measure.check_tenor(tenor)
    if measure.kind == "forward" and measure.a != swaption.a:
        raise ValueError("forward measure index must equal the swaption expiry index")
    if len(params.alphas) != tenor.n:
        raise ValueError("one alpha per tenor forward is required")
    if tenor.dates[0] != 0.0:
        raise ValueError("the tenor must start at T_0 = 0 (valuation date)")
    bond = deflating_bond(numeraire, measure, swaption.a, swaption.b, params.sigma, tenor)
    indices = tuple(state_indices(swaption.a, swaption.b, bond))
    maturity = tenor.dates[swaption.a] - tenor.dates[0]
    problem = PdeProblem(tenor, params, measure, indices, maturity)
    spot = tuple(curve.forwards0[i] for i in indices) + (params.v0,)
    discount = market.bond_price(curve.forwards0, 0, bond, tenor)
    return PricingSetup(problem, swaption, spot, bond, discount)


def price_full_grid(level: int, swaption: SwaptionSpec, curve: MarketCurve, params: SabrLmmParams,
                    measure: Measure, config: SolverConfig = SolverConfig(), *,
                    tenor: TenorStructure | None = None, f_max: float = 0.1, v_max: float = 3.5,
                    max_dim: int = 5, numeraire: str = "auto",
                    stats: SolveStats | None = None) -> float:
    """Price in basis points from an isotropic grid of the given level."""
    tenor = tenor or TenorStructure.annual(len(curve.forwards0))
    setup = pricing_setup(swaption, curve, tenor, params, measure, numeraire)
    dim = setup.problem.n_forwards + 1
    if dim > max_dim:
        raise ValueError(f"full grid in {dim} dimensions exceeds the configured maximum {max_dim}")
    spec = GridSpec.isotropic(level, setup.domain(f_max, v_max))
    U = solve_full_grid(spec, setup.payoff(spec), setup.problem, config, stats)
    return setup.price_bp(multilinear_interpolate(U, setup.spot))
