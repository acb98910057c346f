"""Effective-rotation statistics and a Monte Carlo check of the risky land value.

Destructive events arrive as a Poisson process with intensity ``lam``, so the
first event time is exponential and a rotation planned for ``T`` actually
ends at ``min(event time, T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from ._quadrature import simpson
from .dynamics import ThinningSchedule, Trajectory, simulate
from .economics import clearing_cost_rate, final_income


def event_cdf(x, lam: float):
    """Probability of at least one event within ``x`` months: ``1 - exp(-lam x)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or lam < 0:
        raise ValueError("time and intensity must be non-negative")
    out = -np.expm1(-lam * x)
    return float(out) if out.ndim == 0 else out


def expected_effective_age(T: float, lam: float) -> float:
    """Mean of ``min(event time, T)``, i.e. ``F(T) / lam`` (``T`` when ``lam = 0``)."""
    if T <= 0:
        raise ValueError("rotation length must be positive")
    if lam == 0:
        return float(T)
    return event_cdf(T, lam) / lam


def variance_effective_age(T: float, lam: float) -> float:
    """Variance of ``min(event time, T)``."""
    if T <= 0 or lam <= 0:
        raise ValueError("need T > 0 and lam > 0")
    F = event_cdf(T, lam)
    return 2.0 / lam**2 * (1.0 - F) * (F - lam * T) + F**2 / lam**2


@dataclass(frozen=True)
class EffectiveStats:
    expected_age: float
    age_variance: float
    expected_s: float
    s_second_moment: float
    s_variance: float

    @property
    def age_std(self) -> float:
        return math.sqrt(self.age_variance)


def effective_basal_area_stats(traj: Trajectory, lam: float):
    """Moments of the basal area ``s`` at the effective cutting age.

    Returns ``(mean, second_moment, variance)``. The second moment is the
    quantity ``int s^2 dF + s(T)^2 (1 - F(T))``; the variance subtracts the
    squared mean from it.
    """
    T = traj.T
    tail = 1.0 - event_cdf(T, lam)
    density = lam * np.exp(-lam * traj.t)
    mean = tail * traj.s[-1]
    second = tail * traj.s[-1] ** 2
    for i0, i1, _ in traj.segments():
        sl = slice(i0, i1 + 1)
        mean += simpson(traj.s[sl] * density[sl], traj.dt)
        second += simpson(traj.s[sl] ** 2 * density[sl], traj.dt)
    return float(mean), float(second), float(second - mean**2)


def effective_stats(traj: Trajectory, lam: float) -> EffectiveStats:
    mean_s, second_s, var_s = effective_basal_area_stats(traj, lam)
    var_age = variance_effective_age(traj.T, lam) if lam > 0 else 0.0
    return EffectiveStats(expected_effective_age(traj.T, lam), var_age, mean_s, second_s, var_s)


def _cumulative_thinning_income(traj: Trajectory, price, delta: float) -> np.ndarray:
    """Thinning income on ``[0, t_i]`` compounded to ``t_i``, for every grid time."""
    G = np.zeros(len(traj.t))
    offset = 0.0
    for i0, i1, h in traj.segments():
        sl = slice(i0, i1 + 1)
        t = traj.t[sl]
        g = np.asarray(price(traj.s[sl], t)) * h * traj.n[sl] * np.exp(-delta * t)
        G[sl] = offset + cumulative_simpson(g, dx=traj.dt, initial=0.0)
        offset = G[i1]
    return np.exp(delta * traj.t) * G


@dataclass(frozen=True)
class MonteCarloResult:
    estimate: float
    standard_error: float
    samples: int
    payoff_mean: float
    discount_mean: float


def monte_carlo_land_value(
    problem,
    schedule: ThinningSchedule,
    T: Optional[float] = None,
    samples: int = 100_000,
    seed: int = 0,
    batch_size: int = 50_000,
) -> MonteCarloResult:
    """Estimate the land value by simulating event times of the renewal recursion.

    For each draw the rotation ends either at an event ``tau < T`` (income so
    far plus the salvaged clear-cut value, minus replanting and clearing
    costs) or at ``T``. The land value solves ``W = E[(W + payoff) exp(-delta
    end)]``, which is linear in ``W``: with ``A = E[payoff exp(-delta end)]``
    and ``B = E[exp(-delta end)]``, ``W = A / (1 - B)``. The standard error
    follows from the delta method.

    Draws come from Philox streams spawned from ``seed``, one per batch, so
    the result does not depend on how batches are scheduled.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    T = schedule.horizon if T is None else T
    econ, risk, price = problem.econ, problem.risk, problem.price
    lam, delta = risk.intensity, econ.delta
    traj = simulate(problem.initial, problem.model, schedule, T, problem.dt)

    H = _cumulative_thinning_income(traj, price, delta)
    V0 = final_income(traj.n, traj.s, traj.t, price)
    alpha_p = risk.alpha_p(traj.t) * np.ones_like(traj.t)
    clearing = econ.c2 + clearing_cost_rate(traj.t, risk, econ) * traj.n
    event_payoff = H + alpha_p * V0 - econ.c1 - clearing
    end_payoff = H[-1] + V0[-1] - econ.c1

    sums = np.zeros(5)  # a, b, a^2, b^2, ab
    sizes = [min(batch_size, samples - i) for i in range(0, samples, batch_size)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    for size, ss in zip(sizes, streams):
        rng = np.random.Generator(np.random.Philox(ss))
        if lam > 0:
            tau = rng.exponential(1.0 / lam, size)
        else:
            tau = np.full(size, np.inf)
        hit = tau < T
        end = np.where(hit, tau, T)
        b = np.exp(-delta * end)
        a = np.where(hit, np.interp(end, traj.t, event_payoff), end_payoff) * b
        sums += (a.sum(), b.sum(), (a * a).sum(), (b * b).sum(), (a * b).sum())

    n = float(samples)
    A, B = sums[0] / n, sums[1] / n
    if B >= 1:
        raise ValueError("discount expectation >= 1: the renewal equation has no finite solution")
    var_a = max(sums[2] / n - A * A, 0.0)
    var_b = max(sums[3] / n - B * B, 0.0)
    cov = sums[4] / n - A * B
    W = A / (1.0 - B)
    ga, gb = 1.0 / (1.0 - B), A / (1.0 - B) ** 2
    var_W = (ga * ga * var_a + gb * gb * var_b + 2 * ga * gb * cov) / n
    return MonteCarloResult(float(W), float(math.sqrt(max(var_W, 0.0))), samples, float(A), float(B))
