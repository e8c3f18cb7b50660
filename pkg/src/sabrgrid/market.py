"""Tenor structure, market curve, discount factors, Black's formula and swaption payoffs.

All rates are decimals (0.055 for 5.5%). Conversion to basis points only happens
at the reporting boundary, see :data:`BP`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BP = 1.0e4


@dataclass(frozen=True)
class TenorStructure:
    """Payment dates ``T_0 < T_1 < ... < T_N`` as year fractions."""

    dates: tuple[float, ...]

    def __post_init__(self):
        dates = tuple(float(t) for t in self.dates)
        object.__setattr__(self, "dates", dates)
        if len(dates) < 2:
            raise ValueError("a tenor structure needs at least two dates")
        if any(t1 <= t0 for t0, t1 in zip(dates, dates[1:])):
            raise ValueError("tenor dates must be strictly increasing")

    @classmethod
    def annual(cls, n_periods: int, start: float = 0.0) -> "TenorStructure":
        return cls(tuple(start + k for k in range(n_periods + 1)))

    @property
    def accruals(self) -> tuple[float, ...]:
        return tuple(t1 - t0 for t0, t1 in zip(self.dates, self.dates[1:]))

    @property
    def n(self) -> int:
        """Index of the last date, i.e. the number of accrual periods."""
        return len(self.dates) - 1


@dataclass(frozen=True)
class MarketCurve:
    """Initial forwards ``F_0(0)..F_{N-1}(0)`` and their Black volatilities."""

    forwards0: tuple[float, ...]
    black_vols: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "forwards0", tuple(float(f) for f in self.forwards0))
        object.__setattr__(self, "black_vols", tuple(float(v) for v in self.black_vols))
        if len(self.forwards0) != len(self.black_vols):
            raise ValueError("forwards0 and black_vols must have the same length")
        if any(f < 0 for f in self.forwards0):
            raise ValueError("initial forwards must be non-negative")
        if any(v < 0 for v in self.black_vols):
            raise ValueError("Black volatilities must be non-negative")

    def check_tenor(self, tenor: TenorStructure) -> None:
        if len(self.forwards0) != tenor.n:
            raise ValueError(
                f"curve has {len(self.forwards0)} forwards but tenor has {tenor.n} periods"
            )


@dataclass(frozen=True)
class SwaptionSpec:
    """European ``T_a x (T_b - T_a)`` payer swaption with fixed rate ``strike``."""

    a: int
    b: int
    strike: float

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError(f"swaption indices must satisfy 0 < a < b, got a={self.a}, b={self.b}")
        if self.strike <= 0:
            raise ValueError("strike must be positive")

    def check_tenor(self, tenor: TenorStructure) -> None:
        if self.b > tenor.n:
            raise ValueError(f"swaption end index b={self.b} exceeds tenor length N={tenor.n}")


# EURIBOR data of 27 July 2004, one-year accruals.
REFERENCE_FORWARDS = (
    0.02423306, 0.03281384, 0.03931690, 0.04364818, 0.04680236,
    0.04933085, 0.05135066, 0.05273314, 0.05376115,
)
REFERENCE_VOLS = (0.0, 0.2473, 0.2245, 0.1936, 0.1743, 0.1615, 0.1502, 0.1424, 0.1342)
REFERENCE_STRIKE = 0.055


def reference_market() -> tuple[TenorStructure, MarketCurve]:
    """The nine-period annual curve used throughout the convergence experiments."""
    tenor = TenorStructure.annual(len(REFERENCE_FORWARDS))
    return tenor, MarketCurve(REFERENCE_FORWARDS, REFERENCE_VOLS)


def norm_cdf(x):
    """Standard normal distribution function, accurate to double precision."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    from scipy.special import ndtr

    return ndtr(np.asarray(x, dtype=float))


def black_price(K: float, F: float, nu: float) -> float:
    """Undiscounted Black call value ``F N(d1) - K N(d2)`` with total volatility ``nu``."""
    if K <= 0 or F <= 0:
        raise ValueError("Black's formula needs positive strike and forward")
    if nu < 0:
        raise ValueError("total volatility must be non-negative")
    if nu == 0.0:
        return max(F - K, 0.0)
    d1 = (math.log(F / K) + 0.5 * nu * nu) / nu
    d2 = d1 - nu
    return F * norm_cdf(d1) - K * norm_cdf(d2)


def bond_price(forwards, i: int, j: int, tenor: TenorStructure):
    """``P(T_i, T_j)`` from the forwards ``F_i..F_{j-1}`` observed at ``T_i``.

    ``forwards`` is indexed by tenor forward index; entries may be scalars or
    equally shaped arrays, in which case the result is an array.
    """
    if i > j:
        raise ValueError(f"bond_price needs i <= j, got i={i}, j={j}")
    tau = tenor.accruals
    out = 1.0
    for k in range(i, j):
        growth = 1.0 + tau[k] * np.asarray(forwards[k], dtype=float)
        if np.any(growth <= 0):
            raise ValueError(f"1 + tau*F_{k} <= 0: forward below -1/tau")
        out = out / growth
    return out if np.ndim(out) else float(out)


def swaption_payoff(forwards, spec: SwaptionSpec, tenor: TenorStructure, numeraire: int | None = None):
    """Swaption payoff at ``T_a`` relative to the bond ``P(T_a, T_numeraire)``.

    With the default ``numeraire = a`` the numeraire is worth one at expiry and
    this is ``(sum_i P(T_a, T_{i+1}) tau_i (F_i - K))^+``.  Forwards up to
    ``max(b, numeraire) - 1`` must be supplied.
    """
    a, b, K = spec.a, spec.b, spec.strike
    tau = tenor.accruals
    numeraire = a if numeraire is None else numeraire
    if numeraire < a:
        raise ValueError("numeraire bond must mature at or after the swaption expiry")
    swap = 0.0
    discount = 1.0
    for i in range(a, b):
        discount = discount * bond_price(forwards, i, i + 1, tenor)
        swap = swap + discount * tau[i] * (np.asarray(forwards[i], dtype=float) - K)
    value = np.maximum(swap, 0.0)
    if numeraire != a:
        value = value / bond_price(forwards, a, numeraire, tenor)
    return value if np.ndim(value) else float(value)


def caplet_black_value(curve: MarketCurve, tenor: TenorStructure, i: int, K: float) -> float:
    """``P(T_0, T_{i+1}) tau_i Bl(K, F_i(0), sigma_i sqrt(T_i - T_0))`` as a decimal value."""
    if not 1 <= i <= tenor.n - 1:
        raise ValueError(f"caplet index must lie in [1, N-1], got {i}")
    tau = tenor.accruals
    nu = curve.black_vols[i] * math.sqrt(tenor.dates[i] - tenor.dates[0])
    discount = bond_price(curve.forwards0, 0, i + 1, tenor)
    return discount * tau[i] * black_price(K, curve.forwards0[i], nu)
