"""Faustmann optimisation over thinning schedules and rotation length.

The problem is solved in two stages: for a fixed rotation ``T`` the
risk-adjusted income is maximised over the thinning schedule, then the
resulting land value is maximised over ``T`` on a half-month grid.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._quadrature import simpson
from .control import (
    UNDETERMINED,
    BangBangReport,
    SwitchingContext,
    adjoint_backward,
    optimal_switch_time,
    verify_bang_bang,
)
from .dynamics import (
    DEFAULT_DT,
    DEFAULT_S0,
    GrowthModel,
    StandState,
    ThinningSchedule,
    Trajectory,
    grid_steps,
    rk4_piecewise,
    simulate,
    simulate_batch,
    _stand_rhs,
)
from .economics import (
    NO_RISK,
    EconomicParams,
    PriceModel,
    RiskParams,
    _modified_integrand,
    land_value,
    modified_income,
)

FAMILIES = ("none", "bang_bang", "free_grid")

COARSE_STEP = 0.5
REFINE_STEP = 0.05
EXHAUSTIVE_MAX = 20
EXHAUSTIVE_LIMIT = 24


@dataclass(frozen=True)
class Problem:
    """A stand, its economics and the admissible thinning family.

    ``risk.intensity == 0`` encodes the risk-free problem.
    """

    model: GrowthModel
    price: PriceModel
    econ: EconomicParams
    risk: RiskParams = NO_RISK
    n0: float = 650.0
    s0: float = DEFAULT_S0
    T_range: tuple = (30.0, 100.0)
    T_step: float = 0.5
    control_family: str = "bang_bang"
    hbar: float = 0.075
    dt: float = DEFAULT_DT
    free_grid_step: float = 7.0

    def __post_init__(self):
        lo, hi = self.T_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid T_range {self.T_range}")
        if self.T_step <= 0:
            raise ValueError("T_step must be positive")
        if self.control_family not in FAMILIES:
            raise ValueError(f"control_family must be one of {FAMILIES}")
        if self.n0 < 0 or self.s0 < 0:
            raise ValueError("initial stand must be non-negative")
        grid_steps(self.T_step, self.dt)

    @property
    def initial(self) -> StandState:
        return StandState(0.0, self.n0, self.s0)

    @property
    def T_grid(self) -> np.ndarray:
        lo, hi = self.T_range
        k = int(np.floor((hi - lo) / self.T_step + 1e-9))
        return lo + self.T_step * np.arange(k + 1)

    def replace(self, **changes) -> "Problem":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Evaluation:
    trajectory: Trajectory
    income: float
    land_value: float


def evaluate(problem: Problem, schedule: ThinningSchedule, T: Optional[float] = None) -> Evaluation:
    """Simulate a schedule and compute its income and land value from scratch."""
    traj = simulate(problem.initial, problem.model, schedule, T, problem.dt)
    V = modified_income(traj, problem.price, problem.econ, problem.risk)
    return Evaluation(traj, V, land_value(V, problem.econ, problem.risk, traj.T))


@dataclass(frozen=True, eq=False)
class Solution:
    T_opt: float
    schedule: ThinningSchedule
    W0: float
    inner_value: float
    curve_T: np.ndarray
    curve_W0: np.ndarray
    diagnostics: Optional[BangBangReport] = None
    trajectory: Optional[Trajectory] = None

    @property
    def onset(self) -> Optional[float]:
        return self.schedule.switch_time if self.schedule.is_bang_bang() else None


class _SwitchBank:
    """Bang-bang trajectories for many switch times, simulated together.

    A trajectory truncated at ``T`` is the trajectory of the horizon-``T``
    schedule, so one simulation up to ``T_max`` serves every rotation.
    Values are computed with :func:`modified_income` on the truncated
    trajectory, i.e. exactly as :func:`evaluate` would.
    """

    def __init__(self, problem: Problem, switch_times, T_max: float):
        self.problem = problem
        self.T_max = T_max
        dt = problem.dt
        N = grid_steps(T_max, dt)
        self.switch_idx = np.array([min(grid_steps(s, dt), N + 1) if np.isfinite(s) else N + 1 for s in switch_times])
        self.t = np.arange(N + 1) * dt
        on = np.arange(N)[:, None] >= self.switch_idx[None, :]
        rates = np.where(on, problem.hbar, 0.0)
        self.n, self.s = simulate_batch(problem.n0, problem.s0, problem.model, range(N + 1), rates, dt)

    def value(self, T: float, j: int) -> float:
        p = self.problem
        k = grid_steps(T, p.dt)
        idx = self.switch_idx[j]
        switch = idx * p.dt if idx < k else T
        schedule = ThinningSchedule.bang_bang(switch, T, p.hbar)
        traj = Trajectory(self.t[: k + 1], self.n[: k + 1, j], self.s[: k + 1, j], schedule, p.dt)
        return modified_income(traj, p.price, p.econ, p.risk)


def _best(values, keys):
    """Index of the maximum; ties go to the largest key (latest switch)."""
    values = np.asarray(values)
    top = values.max()
    tied = [i for i, v in enumerate(values) if v == top]
    return max(tied, key=lambda i: keys[i])


def _coarse_candidates(T: float, dt: float):
    """Half-month switch times strictly before ``T`` plus 'never' (``inf``)."""
    out = [i * COARSE_STEP for i in range(int(np.floor(T / COARSE_STEP - 1e-9)) + 1) if i * COARSE_STEP < T - 1e-9]
    return out + [np.inf]


def _refine_window(best: float, T: float, dt: float):
    if not np.isfinite(best):
        lo = T - COARSE_STEP
        return [x for x in np.round(np.arange(lo, T, REFINE_STEP) / dt) * dt if 0 <= x < T - 1e-9]
    lo, hi = max(0.0, best - COARSE_STEP), min(T, best + COARSE_STEP)
    pts = np.round(np.arange(lo, hi + 1e-9, REFINE_STEP) / dt) * dt
    return [float(x) for x in pts if x < T - 1e-9]


def _bang_bang_search(T: float, problem: Problem):
    coarse = _coarse_candidates(T, problem.dt)
    bank = _SwitchBank(problem, coarse, T)
    vals = [bank.value(T, j) for j in range(len(coarse))]
    best = coarse[_best(vals, coarse)]
    fine = _refine_window(best, T, problem.dt)
    cands, values = list(coarse), list(vals)
    if fine:
        bank2 = _SwitchBank(problem, fine, T)
        cands += fine
        values += [bank2.value(T, j) for j in range(len(fine))]
    j = _best(values, cands)
    switch = cands[j] if np.isfinite(cands[j]) else T
    return ThinningSchedule.bang_bang(switch, T, problem.hbar), values[j]


def inner_max(T: float, problem: Problem):
    """Best thinning schedule for a fixed rotation ``T``.

    Returns ``(schedule, value)`` where ``value`` is the risk-adjusted income
    (the plain rotation income when there is no risk). The bang-bang family
    is searched on a half-month grid of switch times, then refined to
    ``REFINE_STEP`` around the best one. For growth that ignores density the
    result is compared with the switching-function solution and a warning is
    issued if the latter does better.
    """
    family = problem.control_family
    if family == "none":
        ev = evaluate(problem, ThinningSchedule.constant(0.0, T, problem.hbar))
        return ev.trajectory.schedule, ev.income
    if family == "free_grid":
        return brute_force_control(T, problem, problem.free_grid_step)
    schedule, value = _bang_bang_search(T, problem)
    if not problem.model.density_dependent:
        _crosscheck(T, problem, value)
    return schedule, value


def _crosscheck(T, problem, value):
    base = simulate(problem.initial, problem.model, ThinningSchedule.constant(0.0, T, problem.hbar), T, problem.dt)
    ctx = SwitchingContext.from_trajectory(base, problem.price, problem.econ, problem.risk, problem.model, problem.hbar)
    decision = optimal_switch_time(ctx)
    if decision.kind == UNDETERMINED:
        return
    other = evaluate(problem, decision.schedule(T, problem.hbar, problem.dt)).income
    if other > value + 1e-9 * abs(value):
        warnings.warn(
            f"switching-function schedule beats the grid search at T={T}: {other} > {value}", RuntimeWarning
        )


def _segmentwise_income(problem: Problem, T: float, cuts, rates):
    """Risk-adjusted income for a batch of schedules sharing ``cuts``.

    Integrates one segment at a time so only that segment's samples are held
    in memory. ``rates`` has shape ``(n_segments, batch)``.
    """
    dt = problem.dt
    rate = problem.econ.delta + problem.risk.intensity
    integrand = _modified_integrand(problem.price, problem.econ, problem.risk)
    rhs = _stand_rhs(problem.model)
    batch = rates.shape[1]
    y = np.empty((2, batch))
    y[0], y[1] = problem.n0, problem.s0
    total = np.zeros(batch)
    for k, (i0, i1) in enumerate(zip(cuts[:-1], cuts[1:])):
        local = [0, i1 - i0]
        h = rates[k]
        # shift time so the local integration starts at i0 * dt
        shifted = lambda t, yy, hh, off=i0 * dt: rhs(t + off, yy, hh)
        out = rk4_piecewise(shifted, y, local, h[None, :], dt)
        t = (i0 + np.arange(i1 - i0 + 1)) * dt
        f = integrand(h[None, :], t[:, None], out[:, 0, :], out[:, 1, :]) * np.exp(rate * (T - t))[:, None]
        total += simpson(f, dt)
        y = out[-1]
    final = np.asarray(problem.price(y[1], T)) * y[0]
    return total + final


def _schedules_from_bits(bits, T, hbar):
    return ThinningSchedule.from_intervals([hbar if b else 0.0 for b in bits], T, hbar)


def brute_force_control(
    T: float,
    problem: Problem,
    grid_step: float,
    exhaustive: Optional[bool] = None,
    seed: int = 0,
    chunk: int = 1 << 14,
):
    """Search thinning schedules that take ``0`` or ``hbar`` on each interval.

    With up to ``EXHAUSTIVE_MAX`` intervals every one of the ``2**K``
    schedules is evaluated. Beyond that a coordinate-ascent hill climb is run
    from eight seeds: never thin, always thin, the best single-switch
    schedule on the interval grid and five random single-switch schedules.
    The exhaustive mode is the oracle of record; the hill climb is a
    heuristic.
    """
    dt = problem.dt
    K = grid_steps(T, grid_step)
    step_cells = grid_steps(grid_step, dt)
    cuts = [i * step_cells for i in range(K + 1)]
    hbar = problem.hbar
    if exhaustive is None:
        exhaustive = K <= EXHAUSTIVE_MAX
    if exhaustive and K > EXHAUSTIVE_LIMIT:
        raise ValueError(f"{K} intervals is too many for exhaustive search (limit {EXHAUSTIVE_LIMIT})")

    def values_of(bit_rows):
        bit_rows = np.asarray(bit_rows, dtype=bool)
        out = np.empty(len(bit_rows))
        for c0 in range(0, len(bit_rows), chunk):
            block = bit_rows[c0 : c0 + chunk]
            out[c0 : c0 + len(block)] = _segmentwise_income(problem, T, cuts, np.where(block.T, hbar, 0.0))
        return out

    if exhaustive:
        codes = np.arange(1 << K)
        bits = ((codes[:, None] >> np.arange(K)[None, :]) & 1).astype(bool)
        vals = values_of(bits)
        best = int(np.argmax(vals))
        return _schedules_from_bits(bits[best], T, hbar), float(vals[best])

    rng = np.random.Generator(np.random.Philox(seed))
    switches = np.arange(K + 1)
    singles = np.arange(K)[None, :] >= switches[:, None]
    single_vals = values_of(singles)
    seeds = [np.zeros(K, bool), np.ones(K, bool), singles[int(np.argmax(single_vals))]]
    seeds += [singles[j] for j in rng.integers(0, K + 1, size=5)]

    best_bits, best_val = None, -np.inf
    for start in seeds:
        cur = start.copy()
        cur_val = float(values_of(cur[None, :])[0])
        while True:
            flips = np.repeat(cur[None, :], K, axis=0)
            flips[np.arange(K), np.arange(K)] ^= True
            fv = values_of(flips)
            j = int(np.argmax(fv))
            if fv[j] <= cur_val:
                break
            cur, cur_val = flips[j], float(fv[j])
        if cur_val > best_val:
            best_bits, best_val = cur, cur_val
    return _schedules_from_bits(best_bits, T, hbar), best_val


def _outer_bang_bang(problem: Problem, Ts):
    T_max = float(Ts[-1])
    coarse = _coarse_candidates(T_max, problem.dt)
    bank = _SwitchBank(problem, coarse, T_max)
    best_coarse = []
    for T in Ts:
        idx = [j for j, c in enumerate(coarse) if c < T - 1e-9 or not np.isfinite(c)]
        vals = [bank.value(T, j) for j in idx]
        keys = [coarse[j] for j in idx]
        b = _best(vals, keys)
        best_coarse.append((keys[b], vals[b]))
    fine_sets = [_refine_window(b, T, problem.dt) for T, (b, _) in zip(Ts, best_coarse)]
    union = sorted(set(itertools.chain.from_iterable(fine_sets)) - set(coarse))
    fine_bank = _SwitchBank(problem, union, T_max) if union else None
    where = {x: j for j, x in enumerate(union)}
    results = []
    for T, (bc, bv), fine in zip(Ts, best_coarse, fine_sets):
        keys, vals = [bc], [bv]
        for x in fine:
            if x in where:
                keys.append(x)
                vals.append(fine_bank.value(T, where[x]))
        j = _best(vals, keys)
        switch = keys[j] if np.isfinite(keys[j]) else T
        results.append((ThinningSchedule.bang_bang(switch, T, problem.hbar), vals[j]))
    return results


def outer_max(problem: Problem, verify: bool = True) -> Solution:
    """Maximise the land value over the rotation grid.

    Every rotation on ``problem.T_grid`` is evaluated with its best thinning
    schedule; the maximiser (smallest ``T`` on ties) is then re-evaluated from
    scratch and, when ``verify`` is set, checked against the costate sign.
    """
    Ts = problem.T_grid
    if problem.control_family == "bang_bang":
        inner = _outer_bang_bang(problem, Ts)
    elif problem.control_family == "none":
        bank = _SwitchBank(problem, [np.inf], float(Ts[-1]))
        inner = [(ThinningSchedule.constant(0.0, T, problem.hbar), bank.value(T, 0)) for T in Ts]
    else:
        inner = [inner_max(T, problem) for T in Ts]
    W = np.array([land_value(v, problem.econ, problem.risk, T) for T, (_, v) in zip(Ts, inner)])
    k = int(np.argmax(W))
    T_opt, schedule = float(Ts[k]), inner[k][0]
    ev = evaluate(problem, schedule, T_opt)
    report = None
    if verify:
        adj = adjoint_backward(ev.trajectory, problem.price, problem.econ, problem.risk, problem.model)
        report = verify_bang_bang(adj, schedule)
    return Solution(T_opt, schedule, ev.land_value, ev.income, Ts, W, report, ev.trajectory)


def fixed_rotation(problem: Problem, T: float, verify: bool = True) -> Solution:
    """Best schedule for a rotation fixed by other considerations."""
    schedule, _ = inner_max(T, problem)
    ev = evaluate(problem, schedule, T)
    report = None
    if verify:
        adj = adjoint_backward(ev.trajectory, problem.price, problem.econ, problem.risk, problem.model)
        report = verify_bang_bang(adj, schedule)
    return Solution(T, schedule, ev.land_value, ev.income, np.array([T]), np.array([ev.land_value]), report, ev.trajectory)


def write_curve_csv(path, solution: Solution) -> None:
    with open(path, "w") as fh:
        fh.write("T,W0\n")
        for T, W in zip(solution.curve_T, solution.curve_W0):
            fh.write(f"{T:.10g},{float(W)!r}\n")
