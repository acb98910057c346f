"""Average-tree population dynamics under a thinning schedule.

The stand is described by the tree density ``n`` (stems/ha) and the average
tree basal area ``s`` (m^2) at breast height. Under a thinning rate ``h(t)``
they evolve as::

    dn/dt = -(m(t) + h(t)) n
    ds/dt = G(n, s, t)

Time is in months throughout. Integration is classical fixed-step RK4; steps
never straddle a change of the thinning rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DT = 0.05
DEFAULT_S0 = 1e-4

#: Asymptotic height (m) of the Eucalyptus height curve.
EUCALYPTUS_H0 = 30.0
EUCALYPTUS_MORTALITY = 0.0042

_GRID_TOL = 1e-9


def _as_time_function(value) -> Callable:
    if callable(value):
        return value
    const = float(value)
    return lambda t: np.zeros_like(np.asarray(t, dtype=float)) + const


def grid_steps(span: float, dt: float) -> int:
    """Number of ``dt`` steps in ``span``; raises if ``span`` is off the grid."""
    if dt <= 0:
        raise ValueError(f"step must be positive, got {dt}")
    k = round(span / dt)
    if abs(k * dt - span) > _GRID_TOL * max(1.0, abs(span)):
        raise ValueError(f"{span} is not a multiple of the step {dt}")
    return int(k)


@dataclass(frozen=True)
class StandState:
    t: float
    n: float
    s: float

    def __post_init__(self):
        if self.n < 0 or self.s < 0:
            raise ValueError(f"stand state must be non-negative, got n={self.n}, s={self.s}")

    @property
    def basal_area(self) -> float:
        """Stand basal area ``n * s`` (m^2/ha)."""
        return self.n * self.s


@dataclass(frozen=True)
class ThinningSchedule:
    """Piecewise-constant thinning rate on ``[0, T]``.

    ``rates[k]`` applies on ``[breakpoints[k], breakpoints[k+1])``; the last
    rate also applies at ``T``.
    """

    breakpoints: tuple
    rates: tuple
    ceiling: float

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "rates", rates)
        if len(bp) != len(rates) + 1 or not rates:
            raise ValueError("need len(breakpoints) == len(rates) + 1 >= 2")
        if bp[0] != 0.0:
            raise ValueError("schedule must start at t = 0")
        if any(b1 <= b0 for b0, b1 in zip(bp[:-1], bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if self.ceiling < 0:
            raise ValueError("thinning ceiling must be non-negative")
        for r in rates:
            if r < 0 or r > self.ceiling * (1 + 1e-12):
                raise ValueError(f"rate {r} outside [0, {self.ceiling}]")

    @classmethod
    def constant(cls, rate: float, T: float, ceiling: float) -> "ThinningSchedule":
        return cls((0.0, T), (rate,), ceiling)

    @classmethod
    def bang_bang(cls, switch_time: float, T: float, ceiling: float) -> "ThinningSchedule":
        """No thinning before ``switch_time``, thinning at ``ceiling`` after.

        ``switch_time <= 0`` thins throughout; ``switch_time >= T`` never thins.
        """
        if switch_time <= 0:
            return cls.constant(ceiling, T, ceiling)
        if switch_time >= T:
            return cls.constant(0.0, T, ceiling)
        return cls((0.0, switch_time, T), (0.0, ceiling), ceiling)

    @classmethod
    def from_intervals(cls, rates: Sequence[float], T: float, ceiling: float) -> "ThinningSchedule":
        """Equal-length intervals covering ``[0, T]`` with the given rates."""
        k = len(rates)
        return cls(tuple(T * i / k for i in range(k + 1)), tuple(rates), ceiling)

    @property
    def horizon(self) -> float:
        return self.breakpoints[-1]

    @property
    def switch_time(self) -> Optional[float]:
        """Onset of thinning for a bang-bang schedule, ``None`` if it never thins.

        Raises ``ValueError`` when the schedule is not of bang-bang form.
        """
        if not self.is_bang_bang():
            raise ValueError("schedule is not bang-bang")
        for b, r in zip(self.breakpoints, self.rates):
            if r > 0:
                return b
        return None

    def is_bang_bang(self) -> bool:
        """True when the rate is 0 up to some time and the ceiling afterwards."""
        seen_on = False
        for r in self.rates:
            if r == self.ceiling and r > 0:
                seen_on = True
            elif r == 0.0:
                if seen_on:
                    return False
            else:
                return False
        return True

    def rate_at(self, t):
        """Thinning rate at ``t`` (right-continuous at breakpoints)."""
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.rates) - 1)
        return np.asarray(self.rates)[idx]

    def truncate(self, T: float) -> "ThinningSchedule":
        """The same schedule restricted to ``[0, T]``."""
        if T <= 0 or T > self.horizon + _GRID_TOL:
            raise ValueError(f"cannot truncate a schedule of horizon {self.horizon} at {T}")
        bp = [b for b in self.breakpoints if b < T - _GRID_TOL]
        rates = list(self.rates[: len(bp)])
        return ThinningSchedule(tuple(bp) + (T,), tuple(rates), self.ceiling)

    def grid_cuts(self, dt: float) -> list:
        """Breakpoint positions as grid indices; raises when misaligned."""
        return [grid_steps(b, dt) for b in self.breakpoints]


@dataclass(frozen=True)
class GrowthModel:
    """Individual growth ``G(n, s, t)`` and natural mortality ``m(t)``.

    All callables must accept numpy arrays. ``growth_dn`` / ``growth_ds`` are
    optional analytic partial derivatives; central differences are used when
    they are missing.
    """

    growth: Callable
    mortality: Callable = field(default=EUCALYPTUS_MORTALITY)
    density_dependent: bool = True
    growth_dn: Optional[Callable] = None
    growth_ds: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "mortality", _as_time_function(self.mortality))

    def partials(self, n, s, t):
        """``(dG/dn, dG/ds)`` at the given points."""
        n = np.asarray(n, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.growth_dn is not None:
            g_n = self.growth_dn(n, s, t)
        elif not self.density_dependent:
            g_n = np.zeros(np.broadcast(n, s).shape)
        else:
            eps = 1e-6 * np.maximum(np.abs(n), 1.0)
            g_n = (self.growth(n + eps, s, t) - self.growth(n - eps, s, t)) / (2 * eps)
        if self.growth_ds is not None:
            g_s = self.growth_ds(n, s, t)
        else:
            eps = 1e-6 * np.maximum(np.abs(s), 1e-6)
            g_s = (self.growth(n, s + eps, t) - self.growth(n, s - eps, t)) / (2 * eps)
        return g_n, g_s


def eucalyptus_height(t):
    """Dominant height (m) at age ``t`` months: ``30 (1 - exp(-t/30))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("age must be non-negative")
    out = -EUCALYPTUS_H0 * np.expm1(-t / EUCALYPTUS_H0)
    return float(out) if out.ndim == 0 else out


def eucalyptus_height_rate(t):
    """Height increment dH/dt (m/month)."""
    out = np.exp(-np.asarray(t, dtype=float) / EUCALYPTUS_H0)
    return float(out) if out.ndim == 0 else out


_EUC_A = 0.7445
_EUC_B = 0.482


def eucalyptus_growth(n, s, t):
    """Basal-area growth per tree, ``0.7445 (1 - exp(-0.482 n s)) / n * H'(t)``."""
    n = np.asarray(n, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(n <= 0):
        raise ZeroDivisionError("Eucalyptus growth is undefined for an empty stand (n = 0)")
    out = _EUC_A * -np.expm1(-_EUC_B * n * s) / n * np.exp(-np.asarray(t, dtype=float) / EUCALYPTUS_H0)
    return float(out) if out.ndim == 0 else out


def _eucalyptus_growth_dn(n, s, t):
    e = np.exp(-_EUC_B * n * s)
    return _EUC_A * np.exp(-t / EUCALYPTUS_H0) * (_EUC_B * s * e * n + np.expm1(-_EUC_B * n * s)) / n**2


def _eucalyptus_growth_ds(n, s, t):
    return _EUC_A * _EUC_B * np.exp(-_EUC_B * n * s) * np.exp(-t / EUCALYPTUS_H0)


def eucalyptus_model(mortality=EUCALYPTUS_MORTALITY) -> GrowthModel:
    """Density-dependent Eucalyptus growth with constant mortality."""
    return GrowthModel(
        growth=eucalyptus_growth,
        mortality=mortality,
        density_dependent=True,
        growth_dn=_eucalyptus_growth_dn,
        growth_ds=_eucalyptus_growth_ds,
        name="eucalyptus",
    )


def no_density_model(rate: Callable, mortality=0.0, rate_derivative: Optional[Callable] = None) -> GrowthModel:
    """Growth ``G(n, s, t) = rate(s, t)`` that ignores stand density."""
    growth = lambda n, s, t: np.asarray(rate(s, t), dtype=float) + 0.0 * np.asarray(n, dtype=float)
    ds = None
    if rate_derivative is not None:
        ds = lambda n, s, t: np.asarray(rate_derivative(s, t), dtype=float) + 0.0 * np.asarray(n, dtype=float)
    return GrowthModel(
        growth=growth,
        mortality=mortality,
        density_dependent=False,
        growth_dn=lambda n, s, t: np.zeros(np.broadcast(np.asarray(n), np.asarray(s)).shape),
        growth_ds=ds,
        name="no-density",
    )


def rk4_piecewise(rhs, y0, cuts, rates, dt):
    """Integrate ``dy/dt = rhs(t, y, h)`` with RK4, ``h`` constant on each segment.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, y, h) -> dy/dt``; ``y`` has shape ``(dim, batch)``.
    y0 : array, shape (dim, batch)
    cuts : sequence of int
        Segment boundaries as grid indices, ``cuts[0] == 0``.
    rates : array, shape (n_segments, batch)
    dt : float

    Returns
    -------
    array, shape (cuts[-1] + 1, dim, batch)
    """
    y = np.array(y0, dtype=float)
    out = np.empty((cuts[-1] + 1,) + y.shape)
    out[0] = y
    half = 0.5 * dt
    for k, (i0, i1) in enumerate(zip(cuts[:-1], cuts[1:])):
        h = rates[k]
        for i in range(i0, i1):
            t = i * dt
            k1 = rhs(t, y, h)
            k2 = rhs(t + half, y + half * k1, h)
            k3 = rhs(t + half, y + half * k2, h)
            k4 = rhs(t + dt, y + dt * k3, h)
            y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[i + 1] = y
    return out


def _stand_rhs(model: GrowthModel):
    growth, mortality = model.growth, model.mortality

    def rhs(t, y, h):
        n, s = y[0], y[1]
        return np.stack((-(mortality(t) + h) * n, growth(n, s, t)))

    return rhs


def simulate_batch(n0, s0, model: GrowthModel, cuts, rates, dt=DEFAULT_DT):
    """Vectorised simulation of several control sequences sharing ``cuts``.

    ``rates`` has shape ``(n_segments, batch)``. Returns ``(n, s)`` arrays of
    shape ``(cuts[-1] + 1, batch)``.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    batch = rates.shape[1]
    y0 = np.empty((2, batch))
    y0[0] = n0
    y0[1] = s0
    out = rk4_piecewise(_stand_rhs(model), y0, list(cuts), rates, dt)
    return out[:, 0, :], out[:, 1, :]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Grid samples of a simulated stand together with the producing schedule."""

    t: np.ndarray
    n: np.ndarray
    s: np.ndarray
    schedule: ThinningSchedule
    dt: float

    def __post_init__(self):
        for name in ("t", "n", "s"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def cuts(self) -> list:
        return self.schedule.grid_cuts(self.dt)

    @property
    def samples(self) -> list:
        return [StandState(float(t), float(n), float(s)) for t, n, s in zip(self.t, self.n, self.s)]

    def segments(self):
        """Yield ``(i0, i1, rate)`` for each constant-control segment."""
        cuts = self.cuts
        for k, rate in enumerate(self.schedule.rates):
            yield cuts[k], cuts[k + 1], rate

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises when ``t`` is off-grid or out of span."""
        if t < -_GRID_TOL or t > self.T + _GRID_TOL:
            raise ValueError(f"t = {t} outside trajectory span [0, {self.T}]")
        return grid_steps(t, self.dt)

    def truncate(self, T: float) -> "Trajectory":
        k = self.index_of(T)
        return Trajectory(self.t[: k + 1], self.n[: k + 1], self.s[: k + 1], self.schedule.truncate(T), self.dt)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "n", "s"])
            for t, n, s in zip(self.t, self.n, self.s):
                writer.writerow([f"{t:.10g}", repr(float(n)), repr(float(s))])


def simulate(
    initial: StandState,
    model: GrowthModel,
    schedule: ThinningSchedule,
    T: Optional[float] = None,
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """Integrate the stand from ``initial`` (at ``t = 0``) up to ``T``.

    ``T`` defaults to the schedule horizon. Every breakpoint must lie on the
    ``dt`` grid so that no RK4 step crosses a change in thinning rate.
    """
    if initial.t != 0:
        raise ValueError("simulations start at t = 0")
    if T is None:
        T = schedule.horizon
    grid_steps(T, dt)
    if T < schedule.horizon - _GRID_TOL:
        schedule = schedule.truncate(T)
    elif T > schedule.horizon + _GRID_TOL:
        raise ValueError(f"schedule covers [0, {schedule.horizon}] but T = {T}")
    cuts = schedule.grid_cuts(dt)
    n, s = simulate_batch(initial.n, initial.s, model, cuts, np.asarray(schedule.rates)[:, None], dt)
    t = np.arange(cuts[-1] + 1) * dt
    return Trajectory(t, n[:, 0], s[:, 0], schedule, dt)


def simulate_stand_aggregate(
    S0: float,
    g0: Callable,
    gamma: Callable,
    mortality,
    schedule: ThinningSchedule,
    T: Optional[float] = None,
    dt: float = DEFAULT_DT,
):
    """Integrate the stand basal area ``dS/dt = g0(S) Gamma(t) - (m + h) S``.

    Returns ``(t, S)`` sampled on the ``dt`` grid.
    """
    if T is None:
        T = schedule.horizon
    grid_steps(T, dt)
    if T < schedule.horizon - _GRID_TOL:
        schedule = schedule.truncate(T)
    cuts = schedule.grid_cuts(dt)
    m = _as_time_function(mortality)

    def rhs(t, y, h):
        S = y[0]
        return np.stack((g0(S) * gamma(t) - (m(t) + h) * S,))

    out = rk4_piecewise(rhs, np.array([[S0]], dtype=float), cuts, np.asarray(schedule.rates)[:, None], dt)
    return np.arange(cuts[-1] + 1) * dt, out[:, 0, 0]


def separable_model(g0: Callable, gamma: Callable, mortality=0.0) -> GrowthModel:
    """Average-tree model whose stand growth is ``n G(n, s, t) = g0(n s) Gamma(t)``."""

    def growth(n, s, t):
        n = np.asarray(n, dtype=float)
        return g0(n * np.asarray(s, dtype=float)) * gamma(t) / n

    return GrowthModel(growth=growth, mortality=mortality, density_dependent=True, name="separable")
