"""Single runs and parameter sweeps on top of the simulator."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

from .config import RunConfig, parse_float_list
from .errors import ConfigError
from .hierarchy import Trace, read_trace
from .metrics import (CSV_COLUMNS, SimReport, energy_overhead, normalized_slowdown,
                      report_row, rows_to_csv)
from .mitigation import PolicyKind
from .simulator import simulate
from .tracegen import gen_trace

AXES = ("attack_duration", "policy", "checkpoint_interval")

# attack applied on the policy axis when the base config names none
DEFAULT_POLICY_SWEEP_PCT = 50


def resolve_trace(config: RunConfig, path: Optional[str] = None) -> Trace:
    """Explicit path, else ``trace.file``, else the synthetic spec seeded by ``sim.seed``."""
    path = path or config.get("trace.file")
    if path:
        return read_trace(path)
    return gen_trace(config.trace_spec(), config.seed)


def run(config: RunConfig, trace: Trace) -> SimReport:
    return simulate(config, trace)


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: str
    config: RunConfig


def sweep_points(base: RunConfig, axis: str) -> List[SweepPoint]:
    """The baseline row followed by one config per axis value."""
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    baseline = base.with_overrides(**{"attack.duration_pct": -1, "policy": "none", "episodes": []})
    points = [SweepPoint(axis, "baseline", baseline)]
    if axis == "attack_duration":
        values = parse_float_list(base.get("sweep.durations"))
        for pct in values:
            cfg = base.with_overrides(**{"attack.duration_pct": pct, "episodes": []})
            points.append(SweepPoint(axis, _label(pct), cfg))
    elif axis == "policy":
        values = [v.strip() for v in base.get("sweep.policies").split(",") if v.strip()]
        attacked = base
        if not base.episodes and base.duration_pct() is None:
            attacked = base.with_overrides(**{"attack.duration_pct": DEFAULT_POLICY_SWEEP_PCT})
        for name in values:
            try:
                PolicyKind(name)
            except ValueError:
                raise ConfigError(f"unknown policy {name!r} in sweep.policies") from None
            points.append(SweepPoint(axis, name, attacked.with_overrides(policy=name)))
    else:
        values = parse_float_list(base.get("sweep.intervals"))
        for interval in values:
            cfg = base.with_overrides(**{"policy": "checkpoint_bypass",
                                         "checkpoint.interval": interval})
            points.append(SweepPoint(axis, _label(interval), cfg))
    if not values:
        raise ConfigError(f"sweep axis {axis!r} has no values")
    return points


def _label(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(x)


def _run_point(args):
    config, trace = args
    return simulate(config, trace)


def sweep(base: RunConfig, trace: Trace, axis: str, jobs: int = 1):
    """Run every point; returns [(point, report)].  Runs share nothing."""
    points = sweep_points(base, axis)
    work = [(p.config, trace) for p in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_point, work))
    else:
        reports = [_run_point(w) for w in work]
    return list(zip(points, reports))


SWEEP_COLUMNS = ["axis", "value", "slowdown", "energy_overhead"] + list(CSV_COLUMNS)


def sweep_table(results) -> str:
    """Plot-ready CSV; ratios are taken against the baseline row."""
    baseline = results[0][1]
    rows = []
    for point, report in results:
        row = {"axis": point.axis, "value": point.value,
               "slowdown": repr(normalized_slowdown(report, baseline)),
               "energy_overhead": repr(energy_overhead(report, baseline))}
        row.update(report_row(report))
        rows.append(row)
    return rows_to_csv(rows, SWEEP_COLUMNS)
