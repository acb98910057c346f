"""Command line entry point: run a scenario file and write its tables and curves.

Usage::

    forestrisk run --config table1.json --out results/
    forestrisk run --config table3.json --fixed-T 84

Scenario files are flat JSON objects whose keys are the fields of
:class:`ScenarioConfig`. The name of a shipped preset (``table1``,
``table2_650``, ``table2_1650``, ``table3``) may be given instead of a path.

Exit status is 0 on success, 2 when the configuration does not validate and
3 when the optimiser produced an unusable result.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .control import adjoint_backward
from .dynamics import DEFAULT_DT, DEFAULT_S0, EUCALYPTUS_MORTALITY, ThinningSchedule, eucalyptus_model
from .economics import EconomicParams, RiskParams, eucalyptus_price
from .optimize import FAMILIES, Problem, Solution, evaluate, fixed_rotation, inner_max, outer_max, write_curve_csv
from .risk_stats import effective_stats, monte_carlo_land_value

log = logging.getLogger("forestrisk")

PRESETS = ("table1", "table2_650", "table2_1650", "table3")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIAGNOSTIC = 3


class ConfigError(ValueError):
    """A scenario file failed validation; the message names the field."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one results table.

    Times are in months, rates in month^-1 and money in euro/ha.
    """

    label: str
    n0: float
    delta: float
    intensity: float
    c1: float
    c2: float = 0.0
    cd: float = 0.0
    cs: float = 0.0
    alpha: float = 0.0
    alpha_p: float = 0.0
    s0: float = DEFAULT_S0
    mortality: float = EUCALYPTUS_MORTALITY
    hbar: float = 0.075
    T_min: float = 30.0
    T_max: float = 100.0
    T_step: float = 0.5
    control_family: str = "bang_bang"
    free_grid_step: float = 7.0
    dt: float = DEFAULT_DT
    fixed_T: Optional[float] = None
    mc_samples: int = 100_000
    mc_seed: int = 0
    out_dir: str = "."
    strict_diagnostics: bool = False
    note: str = ""

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - set(fields))
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        missing = [name for name, f in fields.items() if f.default is dataclasses.MISSING and name not in raw]
        if missing:
            raise ConfigError(f"missing required field(s): {', '.join(missing)}")
        values = {}
        for name, value in raw.items():
            values[name] = _coerce(name, value, fields[name].type)
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> None:
        def need(ok, field, message):
            if not ok:
                raise ConfigError(f"{field}: {message}")

        for name in ("n0", "c1", "c2", "cd", "cs", "mortality", "intensity", "s0"):
            need(getattr(self, name) >= 0, name, "must be non-negative")
        for name in ("delta", "hbar", "T_min", "T_step", "dt", "free_grid_step"):
            need(getattr(self, name) > 0, name, "must be positive")
        need(0 <= self.alpha_p <= self.alpha <= 1, "alpha_p", "need 0 <= alpha_p <= alpha <= 1")
        need(self.T_max >= self.T_min, "T_max", "must be at least T_min")
        need(self.control_family in FAMILIES, "control_family", f"must be one of {', '.join(FAMILIES)}")
        need(self.mc_samples >= 1000, "mc_samples", "must be at least 1000")
        need(self.mc_seed >= 0, "mc_seed", "must be non-negative")
        if self.fixed_T is not None:
            need(self.fixed_T > 0, "fixed_T", "must be positive")
            need(_on_grid(self.fixed_T, self.dt), "fixed_T", f"must be a multiple of dt={self.dt}")
        need(_on_grid(self.T_step, self.dt), "T_step", f"must be a multiple of dt={self.dt}")
        need(_on_grid(self.T_min, self.dt), "T_min", f"must be a multiple of dt={self.dt}")

    def econ(self) -> EconomicParams:
        return EconomicParams(self.delta, self.c1, self.c2, self.cd, self.cs)

    def risk(self) -> RiskParams:
        return RiskParams(self.intensity, self.alpha, self.alpha_p)

    def problem(self, risky: bool = True, family: Optional[str] = None) -> Problem:
        risk = self.risk() if risky else self.risk().with_intensity(0.0)
        return Problem(
            model=eucalyptus_model(self.mortality),
            price=eucalyptus_price(),
            econ=self.econ(),
            risk=risk,
            n0=self.n0,
            s0=self.s0,
            T_range=(self.T_min, self.T_max),
            T_step=self.T_step,
            control_family=family or self.control_family,
            hbar=self.hbar,
            dt=self.dt,
            free_grid_step=self.free_grid_step,
        )


def _on_grid(x: float, dt: float) -> bool:
    k = x / dt
    return abs(k - round(k)) < 1e-9 * max(1.0, k)


def _coerce(name, value, annotation):
    kind = str(annotation)
    if "bool" in kind:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true or false, got {value!r}")
        return value
    if "str" in kind:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if value is None and "Optional" in kind:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{name}: must be finite")
    if "int" in kind and "float" not in kind:
        if int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def load_config(source: str) -> ScenarioConfig:
    """Read a scenario from a path or from a shipped preset name."""
    path = Path(source)
    if not path.exists() and source in PRESETS:
        text = resources.files("forestrisk.scenarios").joinpath(f"{source}.json").read_text()
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {source}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return ScenarioConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# table rows


@dataclass(frozen=True)
class Row:
    group: str
    scenario: str
    schedule: ThinningSchedule
    T: float
    W0: float
    income: float
    risky: bool
    expected_age: float
    age_std: float
    expected_s: float
    s_second_moment: float
    s_variance: float


def describe_schedule(schedule: ThinningSchedule) -> str:
    if schedule.is_bang_bang():
        switch = schedule.switch_time
        if switch is None or switch >= schedule.horizon:
            return "h = 0"
        return f"h = {schedule.ceiling:g}, t >= {switch:.2f}"
    parts = [
        f"{a:g}-{b:g}"
        for a, b, r in zip(schedule.breakpoints[:-1], schedule.breakpoints[1:], schedule.rates)
        if r > 0
    ]
    return "h = {:g} on {}".format(schedule.ceiling, ", ".join(parts)) if parts else "h = 0"


def _row(config, group, scenario, problem, schedule, T) -> Row:
    ev = evaluate(problem, schedule, T)
    stats = effective_stats(ev.trajectory, problem.risk.intensity)
    return Row(
        group,
        scenario,
        schedule,
        float(T),
        ev.land_value,
        ev.income,
        problem.risk.intensity > 0,
        stats.expected_age,
        stats.age_std,
        stats.expected_s,
        stats.s_second_moment,
        stats.s_variance,
    )


def build_rows(config: ScenarioConfig):
    """Optimise the scenario and return ``(rows, solution, problem)``.

    Without ``fixed_T`` the rows are: the risk-free optimum, the same schedule
    and rotation under risk, the best rotation under risk without thinning,
    and the full optimum under risk. With ``fixed_T`` the rotation is held
    fixed and the middle no-thinning row is dropped.
    """
    safe, risky = config.problem(risky=False), config.problem(risky=True)
    if config.fixed_T is None:
        base = outer_max(safe, verify=False)
        plain = outer_max(risky.replace(control_family="none"), verify=False)
        best = outer_max(risky)
        rows = [
            _row(config, "Without risk", "max over h(.), T", safe, base.schedule, base.T_opt),
            _row(config, "With risk", "risk-free schedule", risky, base.schedule, base.T_opt),
            _row(config, "With risk", "max over T, no thinning", risky, plain.schedule, plain.T_opt),
            _row(config, "With risk", "max over h(.), T", risky, best.schedule, best.T_opt),
        ]
        return rows, best, risky
    T = config.fixed_T
    base_schedule, _ = inner_max(T, safe)
    best = fixed_rotation(risky, T)
    rows = [
        _row(config, "Without risk", "max over h(.)", safe, base_schedule, T),
        _row(config, "With risk", "risk-free schedule", risky, base_schedule, T),
        _row(config, "With risk", "max over h(.)", risky, best.schedule, T),
    ]
    return rows, best, risky


def format_table(config: ScenarioConfig, rows) -> str:
    headers = ("Scenario", "Optimal thinnings", "Cutting age", "Land value", "Expected effective cutting age")
    units = ("", "(month^-1)", "(month)", "(euro)", "(month)")
    body = [
        (f"  {r.group}: {r.scenario}", describe_schedule(r.schedule), f"{r.T:.1f}", f"{r.W0:.1f}", f"{r.expected_age:.1f}")
        for r in rows
    ]
    widths = [max(len(x[i]) for x in (headers, units, *body)) for i in range(len(headers))]

    def line(cells):
        return " | ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    title = f"{config.label}: {config.n0:g} stems/ha, alpha = {config.alpha:g}, alpha_p = {config.alpha_p:g}"
    return "\n".join([title, rule, line(headers), line(units), rule, *map(line, body), rule]) + "\n"


def _schedule_record(schedule: ThinningSchedule) -> dict:
    return {
        "breakpoints": [float(x) for x in schedule.breakpoints],
        "rates": [float(x) for x in schedule.rates],
        "ceiling": float(schedule.ceiling),
        "switch_time": schedule.switch_time if schedule.is_bang_bang() else None,
        "description": describe_schedule(schedule),
    }


def result_record(config: ScenarioConfig, rows, best: Solution, problem: Problem, mc) -> dict:
    diag = best.diagnostics
    return {
        "config": dataclasses.asdict(config),
        "rows": [
            {
                "group": r.group,
                "scenario": r.scenario,
                "risky": r.risky,
                "T": r.T,
                "land_value": r.W0,
                "income": r.income,
                "expected_effective_age": r.expected_age,
                "effective_age_std": r.age_std,
                "expected_effective_basal_area": r.expected_s,
                "basal_area_second_moment": r.s_second_moment,
                "basal_area_variance": r.s_variance,
                "schedule": _schedule_record(r.schedule),
            }
            for r in rows
        ],
        "optimum": {
            "T": best.T_opt,
            "land_value": best.W0,
            "income": best.inner_value,
            "onset": best.onset,
            "adjoint_check": {
                "intervals": diag.intervals,
                "violations": diag.violations,
                "fraction": diag.fraction,
                "first_violation_times": list(diag.violation_times),
            },
        },
        "monte_carlo": None
        if mc is None
        else {
            "samples": mc.samples,
            "seed": config.mc_seed,
            "estimate": mc.estimate,
            "standard_error": mc.standard_error,
            "closed_form": best.W0,
            "z": (mc.estimate - best.W0) / mc.standard_error if mc.standard_error > 0 else 0.0,
        },
    }


def write_adjoint_csv(path, adj) -> None:
    with open(path, "w") as fh:
        fh.write("t,mu_n,mu_s,l\n")
        for row in zip(adj.t, adj.mu_n, adj.mu_s, adj.l):
            fh.write(f"{row[0]:.10g},{float(row[1])!r},{float(row[2])!r},{float(row[3])!r}\n")


def run_scenario(config: ScenarioConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows, best, problem = build_rows(config)
    for w in caught:
        log.warning("%s", w.message)
    if not all(math.isfinite(r.W0) for r in rows):
        log.error("optimiser returned a non-finite land value")
        return EXIT_DIAGNOSTIC

    mc = None
    if problem.risk.intensity > 0:
        mc = monte_carlo_land_value(problem, best.schedule, best.T_opt, config.mc_samples, config.mc_seed)

    (out_dir / "table.txt").write_text(format_table(config, rows))
    write_curve_csv(out_dir / "curve.csv", best)
    best.trajectory.to_csv(out_dir / "trajectory.csv")
    adj = adjoint_backward(best.trajectory, problem.price, problem.econ, problem.risk, problem.model)
    write_adjoint_csv(out_dir / "adjoint.csv", adj)
    record = result_record(config, rows, best, problem, mc)
    (out_dir / "result.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")

    if not best.diagnostics.consistent:
        log.warning(
            "adjoint sign check: %d of %d intervals disagree with the optimal schedule",
            best.diagnostics.violations,
            best.diagnostics.intervals,
        )
        if config.strict_diagnostics:
            return EXIT_DIAGNOSTIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forestrisk", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="optimise a scenario and write its artifacts")
    run.add_argument("--config", required=True, help="scenario JSON file or preset name")
    run.add_argument("--fixed-T", type=float, default=None, metavar="MONTHS", help="hold the rotation length fixed")
    run.add_argument("--out", default=None, help="output directory (overrides out_dir in the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.fixed_T is not None:
            config = dataclasses.replace(config, fixed_T=args.fixed_T)
            config.validate()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out if args.out is not None else config.out_dir)
    try:
        with np.errstate(over="raise", invalid="raise"):
            status = run_scenario(config, out_dir)
    except (FloatingPointError, ValueError, ZeroDivisionError) as exc:
        print(f"optimiser failure: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    if status == EXIT_OK:
        log.info("wrote artifacts to %s", out_dir)
    return status


if __name__ == "__main__":
    sys.exit(main())
