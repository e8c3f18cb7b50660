"""Monte Carlo simulation of the SABR/LMM dynamics, used as an independent price oracle."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from . import market
from .market import BP, MarketCurve, SwaptionSpec, TenorStructure
from .model import (Measure, SabrLmmParams, correlation_factor, deflating_bond, drift_matrix,
                    forward_correlation, joint_correlation, state_indices)

SCHEMES = ("log-euler", "euler-full-truncation")
LOG_EULER, FULL_TRUNCATION = 0, 1
Z95 = 1.96


@dataclass(frozen=True)
class McConfig:
    paths: int
    steps_per_year: int = 256
    seed: int = 0
    scheme: str = "log-euler"
    block_size: int = 1 << 14  # paths per random stream; fixed so results ignore worker count

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be at least 1")
        if self.steps_per_year < 1:
            raise ValueError("steps_per_year must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class McResult:
    mean_bp: float
    half_width_bp: float  # nan for a single path
    paths: int

    @property
    def ci_low(self) -> float:
        return self.mean_bp - self.half_width_bp

    @property
    def ci_high(self) -> float:
        return self.mean_bp + self.half_width_bp

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass(frozen=True)
class _Dynamics:
    alphas: np.ndarray
    tau: np.ndarray
    rho: np.ndarray
    D: np.ndarray
    beta: float
    sigma: float

    @classmethod
    def build(cls, params: SabrLmmParams, measure: Measure, tenor: TenorStructure, indices):
        idx = list(indices)
        return cls(np.asarray(params.alphas)[idx], np.asarray(tenor.accruals)[idx],
                   forward_correlation(params, tenor, idx), drift_matrix(measure, tenor, idx),
                   float(params.beta), float(params.sigma))


@nb.njit(cache=True, nogil=True)
def _step_paths(F, V, inc, dt, alphas, tau, rho, D, beta, sigma, scheme):
    """Advance every path one step in place.

    ``F`` is ``(k, n)``, ``V`` is ``(n,)`` and ``inc`` holds the correlated
    increments ``(dW_1..dW_k, dZ)`` as a ``(k + 1, n)`` array.
    """
    k, n = F.shape
    g = np.empty(k)
    for m in range(n):
        # state dependent drift, frozen over the step
        for q in range(k):
            fq = max(F[q, m], 0.0)
            g[q] = tau[q] * fq**beta * alphas[q] / (1.0 + tau[q] * fq)
        v = V[m]
        v2 = v * v
        for p in range(k):
            s = 0.0
            for q in range(k):
                if D[p, q] != 0.0:
                    s += D[p, q] * g[q] * rho[p, q]
            mu = alphas[p] * v2 * s
            if scheme == LOG_EULER:
                F[p, m] *= math.exp((mu - 0.5 * alphas[p] ** 2 * v2) * dt + alphas[p] * v * inc[p, m])
            else:
                fb = max(F[p, m], 0.0) ** beta
                F[p, m] += mu * fb * dt + alphas[p] * v * fb * inc[p, m]
        if sigma != 0.0:
            if scheme == LOG_EULER:
                V[m] = v * math.exp(-0.5 * sigma * sigma * dt + sigma * inc[k, m])
            else:
                V[m] = max(v + sigma * v * inc[k, m], 0.0)


@nb.njit(cache=True, nogil=True)
def _deflated_payoffs(F, tau, n_swap, deflate_to, K):
    # rows 0..n_swap-1 are the swap forwards; deflate_to counts the bonds in P(T_a, T_numeraire)
    k, n = F.shape
    out = np.empty(n)
    for m in range(n):
        swap = 0.0
        disc = 1.0
        for p in range(n_swap):
            disc /= 1.0 + tau[p] * F[p, m]
            swap += disc * tau[p] * (F[p, m] - K)
        bond = 1.0
        for p in range(deflate_to):
            bond /= 1.0 + tau[p] * F[p, m]
        out[m] = max(swap, 0.0) / bond
    return out


def simulate_step(F, V, dt: float, increments, params: SabrLmmParams, measure: Measure,
                  tenor: TenorStructure, indices, scheme: str = "log-euler"):
    """One time step.

    ``F`` holds the forwards ``indices`` (shape ``(k,)`` or ``(k, paths)``) and
    ``increments`` the correlated Brownian increments ``(dW_1, ..., dW_k, dZ)``
    with covariance ``joint_correlation * dt``.  Returns the new ``(F, V)``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    dyn = _Dynamics.build(params, measure, tenor, indices)
    single = np.ndim(F) == 1
    F = np.array(F, dtype=float, ndmin=2).reshape(len(dyn.alphas), -1)
    F = np.ascontiguousarray(F)
    V = np.array(V, dtype=float, ndmin=1).copy()
    inc = np.ascontiguousarray(np.asarray(increments, dtype=float).reshape(len(dyn.alphas) + 1, -1))
    _step_paths(F, V, inc, dt, dyn.alphas, dyn.tau, dyn.rho, dyn.D, dyn.beta, dyn.sigma,
                SCHEMES.index(scheme))
    if single:
        return F[:, 0], float(V[0])
    return F, V


def _block_rng(seed: int, block: int) -> np.random.Generator:
    # one independent stream per block of paths, whoever simulates it
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))


def _combine(blocks):
    # Chan et al. pairwise update, applied in block order
    n, mean, m2 = 0, 0.0, 0.0
    for nb_, mb, m2b in blocks:
        tot = n + nb_
        delta = mb - mean
        mean += delta * nb_ / tot
        m2 += m2b + delta * delta * n * nb_ / tot
        n = tot
    return n, mean, m2


def estimate_price(swaption: SwaptionSpec, curve: MarketCurve, params: SabrLmmParams,
                   measure: Measure, mc: McConfig, workers: int = 1, *,
                   tenor: TenorStructure | None = None, numeraire: str = "auto") -> McResult:
    """Swaption price in basis points with a 95% confidence interval."""
    tenor = tenor or TenorStructure.annual(len(curve.forwards0))
    swaption.check_tenor(tenor)
    curve.check_tenor(tenor)
    measure.check_tenor(tenor)
    if measure.kind != "forward" or measure.a != swaption.a:
        raise ValueError("Monte Carlo pricing needs the forward measure at the swaption expiry")
    if len(params.alphas) != tenor.n:
        raise ValueError("one alpha per tenor forward is required")
    a = swaption.a
    bond = deflating_bond(numeraire, measure, a, swaption.b, params.sigma, tenor)
    indices = state_indices(a, swaption.b, bond)
    F0 = np.asarray(curve.forwards0, dtype=float)[indices]
    if mc.scheme == "log-euler":
        if params.beta != 1.0:
            raise ValueError("the log-Euler scheme requires beta = 1")
        if np.any(F0 <= 0) or params.v0 <= 0:
            raise ValueError("the log-Euler scheme requires positive initial forwards and volatility")
    L = correlation_factor(joint_correlation(params, tenor, indices))
    dyn = _Dynamics.build(params, measure, tenor, indices)
    horizon = tenor.dates[a] - tenor.dates[0]
    n_steps = max(1, int(round(mc.steps_per_year * horizon)))
    dt = horizon / n_steps
    scheme = SCHEMES.index(mc.scheme)
    n_swap, deflate_to = swaption.b - a, bond - a

    sizes = [mc.block_size] * (mc.paths // mc.block_size)
    if mc.paths % mc.block_size:
        sizes.append(mc.paths % mc.block_size)

    k = len(indices)
    sq = math.sqrt(dt)
    Ls = L * sq

    def run(block):
        n = sizes[block]
        rng = _block_rng(mc.seed, block)
        F = np.repeat(F0[:, None], n, axis=1)
        V = np.full(n, float(params.v0))
        z = np.empty((k + 1, n))
        for _ in range(n_steps):
            rng.standard_normal(out=z)
            _step_paths(F, V, Ls @ z, dt, dyn.alphas, dyn.tau, dyn.rho, dyn.D, dyn.beta,
                        dyn.sigma, scheme)
        x = _deflated_payoffs(F, dyn.tau, n_swap, deflate_to, swaption.strike)
        mean = x.mean()
        return n, float(mean), float(((x - mean) ** 2).sum())

    if workers <= 1:
        blocks = [run(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(len(sizes))))
    n, mean, m2 = _combine(blocks)
    scale = market.bond_price(curve.forwards0, 0, bond, tenor) * BP
    half = Z95 * math.sqrt(m2 / (n - 1) / n) * scale if n > 1 else float("nan")
    return McResult(mean * scale, half, n)
