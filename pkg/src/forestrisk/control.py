"""Switching-function analysis of the thinning control.

For growth that does not depend on density, the per-stem price along the
trajectory ``R(t) = p(s(t), t)`` is independent of thinning. The sign
structure of::

    pi(t) = R'(t) - (delta + lam (1 - alpha_p(t)) + m(t)) R(t) - lam c_n(t)
    Pi(t) = int_t^T exp(int_u^T (delta + lam + m + hbar)) pi(u) du

then fixes the optimal bang-bang control. For density-dependent growth the
two costate equations are integrated backwards instead and the control is
checked against the sign of ``l(t) = p(s(t)) exp((delta + lam)(T - t)) - mu_n(t)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.optimize import bisect

from ._quadrature import simpson
from .dynamics import GrowthModel, ThinningSchedule, Trajectory, _as_time_function, grid_steps
from .economics import EconomicParams, PowerLawPrice, PriceModel, RiskParams, clearing_cost_rate

NO_THINNING = "no_thinning"
THIN_FROM = "thin_from"
THIN_ALWAYS = "thin_always"
UNDETERMINED = "undetermined"

SWITCH_TOL = 1e-4


@dataclass(frozen=True)
class SwitchingContext:
    """Everything the switching functions need on ``[0, T]``.

    ``R`` and ``dR`` are the per-stem price along the (thinning-independent)
    basal-area path and its time derivative; ``clearing_rate`` is the
    expected clearing cost per stem ``c_n(t)``.
    """

    T: float
    hbar: float
    delta: float
    R: Callable
    dR: Callable
    mortality: Callable = 0.0
    intensity: float = 0.0
    alpha_p: Callable = 0.0
    clearing_rate: Callable = 0.0
    dt: float = 0.05

    def __post_init__(self):
        for name in ("mortality", "alpha_p", "clearing_rate"):
            object.__setattr__(self, name, _as_time_function(getattr(self, name)))

    @classmethod
    def from_trajectory(
        cls,
        traj: Trajectory,
        price: PriceModel,
        econ: EconomicParams,
        risk: RiskParams,
        model: GrowthModel,
        hbar: float,
    ) -> "SwitchingContext":
        """Build ``R`` from a simulated basal-area path.

        ``R'`` comes from central differences on the trajectory grid
        (second-order one-sided at the ends); both are interpolated with
        cubic splines between grid points.
        """
        if model.density_dependent:
            raise ValueError("switching functions need growth that does not depend on density")
        R = np.asarray(price(traj.s, traj.t), dtype=float)
        dR = np.gradient(R, traj.dt, edge_order=2)
        R_spline = CubicSpline(traj.t, R)
        dR_spline = CubicSpline(traj.t, dR)
        return cls(
            T=traj.T,
            hbar=hbar,
            delta=econ.delta,
            R=R_spline,
            dR=dR_spline,
            mortality=model.mortality,
            intensity=risk.intensity,
            alpha_p=risk.alpha_p,
            clearing_rate=lambda t: clearing_cost_rate(t, risk, econ),
            dt=traj.dt,
        )

    def weight_rate(self, t):
        return self.delta + self.intensity + self.mortality(t) + self.hbar


def pi(t, ctx: SwitchingContext):
    """Switching function ``pi`` at ``t``; with ``lam = 0`` it is the risk-free one."""
    t = np.asarray(t, dtype=float)
    lam = ctx.intensity
    R = ctx.R(t)
    out = ctx.dR(t) - (ctx.delta + lam * (1.0 - ctx.alpha_p(t)) + ctx.mortality(t)) * R - lam * ctx.clearing_rate(t)
    return float(out) if out.ndim == 0 else out


def _weights(u, ctx):
    """``exp(int_u^T k)`` on an increasing uniform grid ``u`` ending at ``T``."""
    k = ctx.weight_rate(u)
    if len(u) < 2:
        return np.ones_like(u)
    du = u[1] - u[0]
    K = cumulative_simpson(k[::-1], dx=du, initial=0.0)[::-1]
    return np.exp(K)


def big_pi(t_low: float, ctx: SwitchingContext) -> float:
    """Weighted tail integral ``Pi(t_low)``; zero at ``t_low = T``."""
    if t_low < 0 or t_low > ctx.T + 1e-12:
        raise ValueError(f"t = {t_low} outside [0, {ctx.T}]")
    span = ctx.T - t_low
    if span <= 1e-14:
        return 0.0
    m = max(2, math.ceil(span / ctx.dt - 1e-9))
    m += m % 2
    u = np.linspace(t_low, ctx.T, m + 1)
    return float(simpson(_weights(u, ctx) * pi(u, ctx), u[1] - u[0]))


def big_pi_grid(ctx: SwitchingContext):
    """``(t, Pi(t))`` on the ``dt`` grid, accumulated backwards from ``T``."""
    N = grid_steps(ctx.T, ctx.dt)
    u = np.arange(N + 1) * ctx.dt
    f = _weights(u, ctx) * pi(u, ctx)
    return u, cumulative_simpson(f[::-1], dx=ctx.dt, initial=0.0)[::-1]


@dataclass(frozen=True)
class SwitchDecision:
    """Outcome of the switching-function analysis at a fixed rotation."""

    kind: str
    switch_time: Optional[float]
    pi_T: float
    Pi_0: float
    monotone: bool
    message: str = ""

    def schedule(self, T: float, hbar: float, dt: float) -> ThinningSchedule:
        if self.kind == UNDETERMINED:
            raise ValueError(self.message)
        if self.kind == NO_THINNING:
            return ThinningSchedule.constant(0.0, T, hbar)
        return ThinningSchedule.bang_bang(round(self.switch_time / dt) * dt, T, hbar)


def is_decreasing(ctx: SwitchingContext, rtol: float = 1e-8) -> bool:
    """Grid check that ``pi`` is non-increasing up to round-off."""
    N = grid_steps(ctx.T, ctx.dt)
    values = pi(np.arange(N + 1) * ctx.dt, ctx)
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    return bool(np.all(np.diff(values) <= rtol * scale + 1e-300))


def optimal_switch_time(ctx: SwitchingContext) -> SwitchDecision:
    """Bang-bang thinning from the sign of ``pi(T)`` and ``Pi(0)``.

    The costate gives ``l(t) = -exp(-int_t^T (m + hbar)) Pi(t)`` on the
    thinning arc, so thinning is optimal wherever ``Pi < 0``:

    * ``pi(T) >= 0``: never thin;
    * ``Pi(0) <= 0``: thin from the start;
    * otherwise thin from the unique root of ``Pi`` in ``(0, T)``.

    When ``pi`` is not decreasing the result is ``UNDETERMINED`` and the
    brute-force optimiser must be used instead.
    """
    pi_T = pi(ctx.T, ctx)
    Pi_0 = big_pi(0.0, ctx)
    if not is_decreasing(ctx):
        return SwitchDecision(
            UNDETERMINED, None, pi_T, Pi_0, False,
            "pi is not decreasing on [0, T]; use brute_force_control",
        )
    if pi_T >= 0:
        return SwitchDecision(NO_THINNING, None, pi_T, Pi_0, True)
    if Pi_0 <= 0:
        return SwitchDecision(THIN_ALWAYS, 0.0, pi_T, Pi_0, True)
    f = lambda t: big_pi(t, ctx)
    hi = ctx.T - ctx.dt
    while hi > 0 and f(hi) >= 0:
        hi -= ctx.dt
    if hi <= 0 or f(hi) >= 0:
        return SwitchDecision(UNDETERMINED, None, pi_T, Pi_0, True, "no sign change of Pi bracketed")
    root = bisect(f, 0.0, hi, xtol=SWITCH_TOL)
    return SwitchDecision(THIN_FROM, float(root), pi_T, Pi_0, True)


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    t: np.ndarray
    mu_n: np.ndarray
    mu_s: np.ndarray
    l: np.ndarray


def _adjoint_rhs(price, model, econ, risk, T):
    r = econ.delta + risk.intensity
    lam = risk.intensity

    def rhs(t, mu, h, n, s):
        e = math.exp(r * (T - t))
        p = float(price(s, t))
        dp = float(price.derivative(s, t))
        g_n, g_s = model.partials(n, s, t)
        ap = float(risk.alpha_p(t)) if lam else 0.0
        cn = float(clearing_cost_rate(t, risk, econ)) if lam else 0.0
        m = float(model.mortality(t))
        dmu_n = -(p * h + lam * (ap * p - cn)) * e + mu[0] * (m + h) - mu[1] * float(g_n)
        dmu_s = -(dp * h + lam * ap * dp) * n * e - mu[1] * float(g_s)
        return np.array([dmu_n, dmu_s])

    return rhs


def adjoint_backward(
    traj: Trajectory,
    price: PriceModel,
    econ: EconomicParams,
    risk: RiskParams,
    model: GrowthModel,
    dt: Optional[float] = None,
) -> AdjointTrajectory:
    """Integrate the costates of ``n`` and ``s`` backwards from ``T``.

    Uses RK4 on the trajectory grid. Stand values at step midpoints come from
    cubic Hermite interpolation with the state derivatives at both ends.
    """
    if dt is not None and abs(dt - traj.dt) > 1e-12:
        raise ValueError(f"adjoint step {dt} does not match trajectory step {traj.dt}")
    T, step = traj.T, traj.dt
    N = len(traj.t) - 1
    rates = np.empty(N)
    for i0, i1, h in traj.segments():
        rates[i0:i1] = h
    rhs = _adjoint_rhs(price, model, econ, risk, T)
    m = model.mortality
    n, s, t = traj.n, traj.s, traj.t

    mu = np.empty((N + 1, 2))
    mu[N] = (float(price(s[N], t[N])), float(price.derivative(s[N], t[N])) * n[N])
    for i in range(N - 1, -1, -1):
        h = rates[i]
        dn0, dn1 = -(m(t[i]) + h) * n[i], -(m(t[i + 1]) + h) * n[i + 1]
        ds0, ds1 = model.growth(n[i], s[i], t[i]), model.growth(n[i + 1], s[i + 1], t[i + 1])
        n_mid = 0.5 * (n[i] + n[i + 1]) + step / 8.0 * (dn0 - dn1)
        s_mid = 0.5 * (s[i] + s[i + 1]) + step / 8.0 * (ds0 - ds1)
        t1, tm, t0 = t[i + 1], t[i + 1] - 0.5 * step, t[i]
        y = mu[i + 1]
        k1 = rhs(t1, y, h, n[i + 1], s[i + 1])
        k2 = rhs(tm, y - 0.5 * step * k1, h, n_mid, s_mid)
        k3 = rhs(tm, y - 0.5 * step * k2, h, n_mid, s_mid)
        k4 = rhs(t0, y - step * k3, h, n[i], s[i])
        mu[i] = y - step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    r = econ.delta + risk.intensity
    l = np.asarray(price(s, t), dtype=float) * np.exp(r * (T - t)) - mu[:, 0]
    l[N] = 0.0
    return AdjointTrajectory(np.array(t), mu[:, 0], mu[:, 1], l)


@dataclass(frozen=True)
class BangBangReport:
    intervals: int
    violations: int
    violation_times: tuple = field(default=())

    @property
    def fraction(self) -> float:
        return self.violations / self.intervals if self.intervals else 0.0

    @property
    def consistent(self) -> bool:
        return self.violations == 0


def verify_bang_bang(adj: AdjointTrajectory, schedule: ThinningSchedule, tol: float = 1e-6) -> BangBangReport:
    """Check that the control maximises ``l(t) h`` on every grid interval.

    A full-rate interval needs ``l >= -tol`` somewhere on its closed interval,
    a zero-rate interval needs ``l <= tol`` somewhere, and an interior rate
    needs ``|l| <= tol`` somewhere. Because switch times live on the grid,
    the sign change of ``l`` is allowed anywhere inside the switching cell.
    """
    if abs(adj.t[-1] - schedule.horizon) > 1e-9:
        raise ValueError("adjoint and schedule cover different horizons")
    l = adj.l
    lo = np.minimum(l[:-1], l[1:])
    hi = np.maximum(l[:-1], l[1:])
    h = schedule.rate_at(adj.t[:-1])
    top = schedule.ceiling
    full = np.isclose(h, top) & (top > 0)
    zero = h == 0
    bad = np.where(full, hi < -tol, np.where(zero, lo > tol, (lo > tol) | (hi < -tol)))
    times = tuple(float(x) for x in adj.t[:-1][bad][:20])
    return BangBangReport(len(h), int(bad.sum()), times)


def prop_a2_condition(
    price: PriceModel,
    model: GrowthModel,
    econ: EconomicParams,
    risk: RiskParams,
    traj: Trajectory,
) -> bool:
    """Sufficient condition for full thinning near ``T`` under a power-law price.

    Evaluates ``a d(G n)/dn <= (delta + lam (1 - alpha_p(T)) + m(T)) s(0)`` at
    the end of ``traj``, with the density derivative by central differences.
    """
    if not isinstance(price, PowerLawPrice):
        raise TypeError(f"the condition requires a power-law price p = C s^a, got {price!r}")
    T = traj.T
    n, s = float(traj.n[-1]), float(traj.s[-1])
    eps = 1e-6 * max(abs(n), 1.0)
    stand_growth = lambda x: float(model.growth(x, s, T)) * x
    d_dn = (stand_growth(n + eps) - stand_growth(n - eps)) / (2 * eps)
    ap = float(risk.alpha_p(T)) if risk.intensity else 0.0
    rhs = (econ.delta + risk.intensity * (1.0 - ap) + float(model.mortality(T))) * float(traj.s[0])
    return bool(price.exponent * d_dn <= rhs)


def write_switching_csv(path, ctx: SwitchingContext, adj: Optional[AdjointTrajectory] = None) -> None:
    """Dump ``t, pi, Pi, l`` on the context grid (``l`` empty without an adjoint)."""
    t, Pi = big_pi_grid(ctx)
    p = pi(t, ctx)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "pi", "Pi", "l"])
        for i, ti in enumerate(t):
            lv = repr(float(adj.l[i])) if adj is not None else ""
            w.writerow([f"{ti:.10g}", repr(float(p[i])), repr(float(Pi[i])), lv])
