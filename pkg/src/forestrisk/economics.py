"""Prices, incomes and Faustmann land values with and without event risk.

Money is in euro, densities in stems/ha, time in months. Thinning income
collected at time ``u`` is compounded forward to the evaluation time at the
discount rate, exactly as the land-value formulas require.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._quadrature import simpson
from .dynamics import Trajectory, eucalyptus_height, _as_time_function


@dataclass(frozen=True)
class EconomicParams:
    """Discount rate (month^-1) and cost constants.

    ``c1`` replanting (euro/ha), ``c2`` fixed clearing cost after an event
    (euro/ha), ``cd`` / ``cs`` clearing cost per damaged / surviving stem.
    """

    delta: float
    c1: float = 0.0
    c2: float = 0.0
    cd: float = 0.0
    cs: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"discount rate must be positive, got {self.delta}")
        for name in ("c1", "c2", "cd", "cs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class PriceModel:
    """Stumpage price per stem as a function of basal area and age."""

    def __init__(self, price: Callable, derivative: Optional[Callable] = None, name: str = "custom"):
        self._price = price
        self._derivative = derivative
        self.name = name

    def __call__(self, s, t):
        return self._price(s, t)

    def derivative(self, s, t):
        """Partial derivative of the price with respect to ``s``."""
        if self._derivative is not None:
            return self._derivative(s, t)
        s = np.asarray(s, dtype=float)
        eps = 1e-6 * np.maximum(np.abs(s), 1e-6)
        return (self._price(s + eps, t) - self._price(s - eps, t)) / (2 * eps)

    def __repr__(self):
        return f"PriceModel({self.name!r})"


class PowerLawPrice(PriceModel):
    """``p(s) = coefficient * s ** exponent``, independent of age."""

    def __init__(self, coefficient: float, exponent: float):
        self.coefficient = float(coefficient)
        self.exponent = float(exponent)
        super().__init__(self._value, self._slope, name=f"power({coefficient}, {exponent})")

    def _value(self, s, t):
        return self.coefficient * np.asarray(s, dtype=float) ** self.exponent + 0.0 * np.asarray(t, dtype=float)

    def _slope(self, s, t):
        s = np.asarray(s, dtype=float)
        if self.exponent == 0:
            return np.zeros(np.broadcast(s, np.asarray(t)).shape)
        return self.coefficient * self.exponent * s ** (self.exponent - 1) + 0.0 * np.asarray(t, dtype=float)


def tree_weight(s, t):
    """Eucalyptus stem weight (kg): ``0.29 + (127.8 + 0.32 t) s H(t)``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0):
        raise ValueError("basal area must be non-negative")
    out = 0.29 + (127.8 + 0.32 * t) * s * eucalyptus_height(t)
    return float(out) if np.ndim(out) == 0 else out


def tree_price(s, t):
    """Eucalyptus stem price, ``0.1 * weight - 0.25``.

    Negative for small trees; the value is deliberately not clamped.
    """
    out = 0.1 * np.asarray(tree_weight(s, t)) - 0.25
    return float(out) if np.ndim(out) == 0 else out


def _tree_price_ds(s, t):
    t = np.asarray(t, dtype=float)
    return 0.1 * (127.8 + 0.32 * t) * eucalyptus_height(t) + 0.0 * np.asarray(s, dtype=float)


def eucalyptus_price() -> PriceModel:
    return PriceModel(tree_price, _tree_price_ds, name="eucalyptus")


class RiskParams:
    """Poisson event intensity and salvage expectations.

    ``alpha`` is the expected surviving fraction after an event and
    ``alpha_p`` the expected fraction of value recovered once market
    depreciation is included; both may be constants or functions of time.
    Constants are checked for ``0 <= alpha_p <= alpha <= 1`` on construction,
    functions whenever they are evaluated.
    """

    def __init__(self, intensity: float = 0.0, alpha=0.0, alpha_p=0.0):
        if intensity < 0:
            raise ValueError("event intensity must be non-negative")
        self.intensity = float(intensity)
        self._alpha_raw = alpha
        self._alpha_p_raw = alpha_p
        self._alpha = _as_time_function(alpha)
        self._alpha_p = _as_time_function(alpha_p)
        if not callable(alpha) and not callable(alpha_p):
            self._check(np.asarray(float(alpha)), np.asarray(float(alpha_p)))

    @staticmethod
    def _check(a, ap):
        if np.any(a > 1) or np.any(ap < 0) or np.any(ap > a):
            raise ValueError("salvage expectations must satisfy 0 <= alpha_p <= alpha <= 1")

    def salvage(self, t):
        """``(alpha(t), alpha_p(t))`` with the ordering constraint enforced."""
        a = np.asarray(self._alpha(t), dtype=float)
        ap = np.asarray(self._alpha_p(t), dtype=float)
        self._check(a, ap)
        return a, ap

    def alpha(self, t):
        return self.salvage(t)[0]

    def alpha_p(self, t):
        return self.salvage(t)[1]

    def with_intensity(self, intensity: float) -> "RiskParams":
        return RiskParams(intensity, self._alpha_raw, self._alpha_p_raw)

    def __repr__(self):
        return f"RiskParams(intensity={self.intensity}, alpha={self._alpha_raw!r}, alpha_p={self._alpha_p_raw!r})"


NO_RISK = RiskParams(0.0)


def clearing_cost_rate(t, risk: RiskParams, econ: EconomicParams):
    """Expected per-stem clearing cost ``cd (1 - alpha) + cs alpha``."""
    a = risk.alpha(t)
    return econ.cd * (1.0 - a) + econ.cs * a


def expected_clearing_cost(n, t, risk: RiskParams, econ: EconomicParams):
    """Expected clearing cost after an event at ``t``: ``(c2 + c_n n, c_n)``."""
    if np.any(np.asarray(n) < 0):
        raise ValueError("tree density must be non-negative")
    cn = clearing_cost_rate(t, risk, econ)
    total = econ.c2 + cn * n
    if np.ndim(total) == 0:
        return float(total), float(cn)
    return total, cn


def final_income(n, s, t, price: PriceModel):
    """Clear-cut income ``p(s, t) n`` (euro/ha)."""
    if np.any(np.asarray(n) < 0):
        raise ValueError("tree density must be non-negative")
    out = np.asarray(price(s, t)) * n
    return float(out) if np.ndim(out) == 0 else out


def _compounded_integral(traj: Trajectory, integrand: Callable, rate: float, k_end: int) -> float:
    """``int_0^{t_k} f(u) exp(rate (t_k - u)) du`` over the trajectory segments.

    ``integrand(h, t, n, s)`` is evaluated per constant-control segment so the
    thinning rate is unambiguous at breakpoints.
    """
    t_end = traj.t[k_end]
    total = 0.0
    for i0, i1, h in traj.segments():
        if i0 >= k_end:
            break
        j1 = min(i1, k_end)
        sl = slice(i0, j1 + 1)
        t = traj.t[sl]
        f = integrand(h, t, traj.n[sl], traj.s[sl]) * np.exp(rate * (t_end - t))
        total += simpson(f, traj.dt)
    return float(total)


def thinning_income(traj: Trajectory, price: PriceModel, delta: float, t: Optional[float] = None) -> float:
    """Income from thinnings on ``[0, t]`` compounded to time ``t``."""
    k = traj.index_of(traj.T if t is None else t)
    return _compounded_integral(traj, lambda h, u, n, s: np.asarray(price(s, u)) * h * n, delta, k)


def total_income(traj: Trajectory, price: PriceModel, delta: float, T: Optional[float] = None) -> float:
    """Thinning income plus clear-cut income at the end of the rotation."""
    k = traj.index_of(traj.T if T is None else T)
    return thinning_income(traj, price, delta, traj.t[k]) + final_income(traj.n[k], traj.s[k], traj.t[k], price)


def _modified_integrand(price: PriceModel, econ: EconomicParams, risk: RiskParams):
    lam = risk.intensity

    def integrand(h, t, n, s):
        p = np.asarray(price(s, t))
        out = p * h * n
        if lam == 0.0:
            return out
        _, ap = risk.salvage(t)
        return out + lam * (ap * p * n - clearing_cost_rate(t, risk, econ) * n)

    return integrand


def modified_income(
    traj: Trajectory, price: PriceModel, econ: EconomicParams, risk: RiskParams, T: Optional[float] = None
) -> float:
    """Risk-adjusted rotation income.

    The thinning income ``p h n`` is augmented with the expected salvage value
    minus expected per-stem clearing cost at rate ``lambda``, everything is
    compounded at ``delta + lambda``, and the clear-cut income is added. With
    ``lambda = 0`` this is exactly :func:`total_income`.
    """
    k = traj.index_of(traj.T if T is None else T)
    rate = econ.delta + risk.intensity
    integral = _compounded_integral(traj, _modified_integrand(price, econ, risk), rate, k)
    return integral + final_income(traj.n[k], traj.s[k], traj.t[k], price)


def land_value_norisk(V: float, c1: float, delta: float, T: float) -> float:
    """Faustmann value ``(V - c1) / (exp(delta T) - 1)`` of an infinite rotation sequence."""
    if T <= 0:
        raise ValueError("rotation length must be positive")
    return (V - c1) / math.expm1(delta * T)


def land_value_risk(V1: float, econ: EconomicParams, risk: RiskParams, T: float) -> float:
    """Land value under Poisson event risk, from the risk-adjusted income ``V1``."""
    if T <= 0:
        raise ValueError("rotation length must be positive")
    d, lam = econ.delta, risk.intensity
    r = d + lam
    return (r / d) * (V1 - econ.c1) / math.expm1(r * T) - (lam / d) * (econ.c1 + econ.c2)


def land_value(V1: float, econ: EconomicParams, risk: RiskParams, T: float) -> float:
    """Dispatch to the risk-free formula when ``lambda == 0``."""
    if risk.intensity == 0.0:
        return land_value_norisk(V1, econ.c1, econ.delta, T)
    return land_value_risk(V1, econ, risk, T)
