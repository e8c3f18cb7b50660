"""Mercurio & Morini SABR/LMM parameters, correlations and measure-dependent drifts."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import MarketCurve, TenorStructure


@dataclass(frozen=True)
class SabrLmmParams:
    """Model parameters.

    ``alphas`` and ``phis`` are indexed by tenor forward index (entry 0 belongs
    to the deterministic first forward and is never used by the dynamics).
    """

    beta: float
    alphas: tuple[float, ...]
    sigma: float
    phis: tuple[float, ...]
    lam: float
    v0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(x) for x in self.alphas))
        object.__setattr__(self, "phis", tuple(float(x) for x in self.phis))
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta outside [0,1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if any(abs(p) > 1 for p in self.phis):
            raise ValueError("phi outside [-1,1]")
        if any(x < 0 for x in self.alphas):
            raise ValueError("alphas must be non-negative")
        if len(self.alphas) != len(self.phis):
            raise ValueError("alphas and phis must have the same length")
        if self.v0 < 0:
            raise ValueError("v0 must be non-negative")

    @classmethod
    def from_curve(cls, curve: MarketCurve, *, beta=1.0, sigma=0.0, phi=0.4, lam=0.1, v0=1.0):
        """Use each forward's Black volatility as its ``alpha_i`` (exact when ``V(0)=1``)."""
        n = len(curve.black_vols)
        return cls(beta, curve.black_vols, sigma, (phi,) * n, lam, v0)


@dataclass(frozen=True)
class Measure:
    """Pricing measure: ``terminal`` or ``forward`` with swaption expiry index ``a``."""

    kind: str
    a: int | None = None

    def __post_init__(self):
        if self.kind not in ("terminal", "forward"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "forward" and (self.a is None or self.a < 0):
            raise ValueError("forward measure needs a non-negative index a")

    @classmethod
    def terminal(cls) -> "Measure":
        return cls("terminal")

    @classmethod
    def forward(cls, a: int) -> "Measure":
        return cls("forward", a)

    def check_tenor(self, tenor: TenorStructure) -> None:
        if self.kind == "forward" and not self.a < tenor.n:
            raise ValueError(f"measure index a={self.a} outside tenor")

    def numeraire_index(self, tenor: TenorStructure) -> int:
        """Maturity index of the bond naming the measure: ``T_N`` or ``T_a``."""
        if self.kind == "terminal":
            return tenor.n
        return self.a

    def martingale_index(self, tenor: TenorStructure) -> int:
        """Bond under which the implemented drifts make every forward a martingale.

        The forward-measure drift keeps ``F_a`` driftless, which is the
        ``P(t, T_{a+1})`` numeraire rather than ``P(t, T_a)``.
        """
        if self.kind == "terminal":
            return tenor.n
        return self.a + 1

    def drift_terms(self, i: int, tenor: TenorStructure) -> tuple[int, list[int]]:
        """Sign and summation indices ``j`` of the drift of ``F_i``."""
        if self.kind == "terminal":
            return -1, list(range(i + 1, tenor.n))
        if i < self.a:
            raise ValueError(f"forward F_{i} has already fixed before T_{self.a}")
        return 1, list(range(self.a + 1, i + 1))


def correlation(lam: float, Ti: float, Tj: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return math.exp(-lam * abs(Ti - Tj))


def drift(i: int, F, V, measure: Measure, params: SabrLmmParams, tenor: TenorStructure):
    """Drift ``mu_i`` of forward ``F_i`` given the state ``(F, V)``.

    ``F`` is indexed by tenor forward index; entries can be scalars or arrays of
    one common shape (vectorised evaluation over grid nodes).
    """
    sign, js = measure.drift_terms(i, tenor)
    tau = tenor.accruals
    T = tenor.dates
    beta = params.beta
    total = 0.0
    for j in js:
        Fj = np.asarray(F[j], dtype=float)
        growth = 1.0 + tau[j] * Fj
        if np.any(growth <= 0):
            raise ValueError(f"degenerate state: 1 + tau*F_{j} <= 0")
        Fb = np.maximum(Fj, 0.0) ** beta
        total = total + tau[j] * Fb / growth * correlation(params.lam, T[i], T[j]) * params.alphas[j]
    out = sign * params.alphas[i] * np.asarray(V, dtype=float) ** 2 * total
    return out if np.ndim(out) else float(out)


def drift_matrix(measure: Measure, tenor: TenorStructure, indices: Sequence[int]) -> np.ndarray:
    """Signed incidence matrix ``D[p, q]`` of the drift sums over state forwards.

    ``mu_p = alpha_p V^2 sum_q D[p, q] tau_q F_q^beta rho_pq alpha_q / (1 + tau_q F_q)``.
    Raises if a drift needs a forward that is not part of the state.
    """
    pos = {idx: p for p, idx in enumerate(indices)}
    D = np.zeros((len(indices), len(indices)))
    for p, i in enumerate(indices):
        sign, js = measure.drift_terms(i, tenor)
        for j in js:
            if j not in pos:
                raise ValueError(f"drift of F_{i} needs F_{j}, which is not a state variable")
            D[p, pos[j]] = sign
    return D


NUMERAIRE_CONVENTIONS = ("auto", "expiry", "martingale")


def deflating_bond(convention: str, measure: Measure, a: int, b: int, sigma: float,
                   tenor: TenorStructure) -> int:
    """Index of the bond that payoffs are deflated by and prices are discounted with.

    ``expiry`` uses the bond naming the measure (``P(t,T_a)`` for the forward
    measure), ``martingale`` the bond consistent with the drifts.  ``auto``
    picks ``martingale`` for a single-period contract without vol-of-vol, where
    the result is the caplet price and must match Black's formula, and
    ``expiry`` otherwise.
    """
    if convention not in NUMERAIRE_CONVENTIONS:
        raise ValueError(f"unknown numeraire convention {convention!r}")
    if convention == "auto":
        convention = "martingale" if (b - a == 1 and sigma == 0.0) else "expiry"
    if convention == "martingale":
        return measure.martingale_index(tenor)
    return measure.numeraire_index(tenor)


def state_indices(a: int, b: int, numeraire: int) -> list[int]:
    """Tenor indices of the forwards that must be state variables to price a swaption."""
    return list(range(a, max(b, numeraire)))


def forward_correlation(params: SabrLmmParams, tenor: TenorStructure, indices: Sequence[int]) -> np.ndarray:
    T = np.asarray(tenor.dates)[list(indices)]
    return np.exp(-params.lam * np.abs(T[:, None] - T[None, :]))


def joint_correlation(params: SabrLmmParams, tenor: TenorStructure, k) -> np.ndarray:
    """Correlation of ``(W_{i_1}, ..., W_{i_k}, Z)``.

    ``k`` is either a count (forwards ``1..k``) or an explicit sequence of tenor
    forward indices.  The matrix is checked to be positive semidefinite.
    """
    indices = list(range(1, k + 1)) if isinstance(k, (int, np.integer)) else list(k)
    if not indices:
        raise ValueError("joint_correlation needs at least one forward")
    n = len(indices)
    C = np.eye(n + 1)
    C[:n, :n] = forward_correlation(params, tenor, indices)
    phi = np.asarray(params.phis)[indices]
    C[n, :n] = phi
    C[:n, n] = phi
    np.fill_diagonal(C, 1.0)
    correlation_factor(C)
    return C


def correlation_factor(C: np.ndarray) -> np.ndarray:
    """A factor ``L`` with ``L L^T = C``; tolerates semidefinite ``C``."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, Q = np.linalg.eigh(C)
        if w.min() < -1e-12:
            raise ValueError(
                f"correlation matrix is not positive semidefinite (min eigenvalue {w.min():.3g})"
            ) from None
        # semidefinite: fall back to a symmetric square root, still reproducing C
        return Q @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ Q.T
