"""Run statistics, the linear energy model, and report serialization."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List

from .errors import ConfigError, InvariantViolation, ReportWriteError, SimulatorError

ENERGY_EVENTS = ("l1_access", "l2_access", "llc_read", "llc_write",
                 "mem_access", "buffer_op", "checkpoint_overhead")

CYCLE_CATEGORIES = ("access", "stall", "flush", "invalidate", "checkpoint", "rollback")

LEVEL_COUNTERS = ("l1_hits", "l1_misses", "l2_hits", "l2_misses", "llc_hits", "llc_misses",
                  "llc_forced_misses", "mem_reads", "mem_writes")

EVENT_COUNTERS = ("flushes", "invalidations", "checkpoints", "forced_checkpoints",
                  "rollbacks", "re_executed_requests", "halts")


@dataclass(frozen=True)
class EnergyModel:
    """Energy per event in arbitrary units.  STTRAM writes cost more than reads."""

    l1_access: float = 1.0
    l2_access: float = 2.0
    llc_read: float = 3.0
    llc_write: float = 8.0
    mem_access: float = 20.0
    buffer_op: float = 1.0
    checkpoint_overhead: float = 50.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"energy.{f.name} must be non-negative")
        if self.llc_write < self.llc_read:
            raise ConfigError("energy.llc_write must be >= energy.llc_read")

    def vector(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in ENERGY_EVENTS}

    def breakdown(self, events: Dict[str, int]) -> Dict[str, float]:
        return {name: events.get(name, 0) * getattr(self, name) for name in ENERGY_EVENTS}


@dataclass
class SimReport:
    config_hash: str = ""
    trace_id: str = ""
    seed: int = 0
    policy: str = "none"
    attack: Dict[str, object] = field(default_factory=dict)
    total_cycles: int = 0
    cycles: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(CYCLE_CATEGORIES, 0))
    requests_executed: int = 0
    useful_requests: int = 0
    levels: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(LEVEL_COUNTERS, 0))
    events: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(EVENT_COUNTERS, 0))
    energy_events: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(ENERGY_EVENTS, 0))
    energy_by_component: Dict[str, float] = field(default_factory=dict)
    energy_total: float = 0.0
    corrupted_reads: int = 0
    squashed_corrupt_reads: int = 0
    restart_required: bool = False
    completed: bool = True
    config: Dict[str, str] = field(default_factory=dict)

    def check_identities(self, energy: EnergyModel) -> None:
        """Cycle and energy conservation; raises InvariantViolation on mismatch."""
        if sum(self.cycles.values()) != self.total_cycles:
            raise InvariantViolation(
                f"cycle accounting broken: {self.cycles} sums to "
                f"{sum(self.cycles.values())}, total {self.total_cycles}")
        expected = sum(self.energy_events[k] * v for k, v in energy.vector().items())
        if expected != self.energy_total:
            raise InvariantViolation(f"energy accounting broken: {expected} != {self.energy_total}")
        if self.completed and self.requests_executed < self.useful_requests:
            raise InvariantViolation("fewer requests executed than the trace holds")

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> Dict[str, object]:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "policy": self.policy,
            "trace_id": self.trace_id,
            "attack": self.attack,
            "cycles": {"total": self.total_cycles, **self.cycles},
            "events": {
                "requests_executed": self.requests_executed,
                "useful_requests": self.useful_requests,
                **self.levels,
                **self.events,
                "squashed_corrupt_reads": self.squashed_corrupt_reads,
                "restart_required": self.restart_required,
                "completed": self.completed,
            },
            "energy": {"total": self.energy_total, "events": self.energy_events,
                       "by_component": self.energy_by_component},
            "corrupted_reads": self.corrupted_reads,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, object]) -> "SimReport":
        cycles = dict(doc["cycles"])
        total = cycles.pop("total")
        ev = dict(doc["events"])
        return cls(
            config_hash=doc["config_hash"], trace_id=doc["trace_id"], seed=doc["seed"],
            policy=doc["policy"], attack=doc["attack"], total_cycles=total, cycles=cycles,
            requests_executed=ev.pop("requests_executed"),
            useful_requests=ev.pop("useful_requests"),
            levels={k: ev.pop(k) for k in LEVEL_COUNTERS},
            events={k: ev.pop(k) for k in EVENT_COUNTERS},
            squashed_corrupt_reads=ev.pop("squashed_corrupt_reads"),
            restart_required=ev.pop("restart_required"),
            completed=ev.pop("completed", True),
            energy_events=dict(doc["energy"]["events"]),
            energy_by_component=dict(doc["energy"]["by_component"]),
            energy_total=doc["energy"]["total"],
            corrupted_reads=doc["corrupted_reads"],
            config=dict(doc.get("config", {})),
        )


CSV_COLUMNS = (
    ["config_hash", "trace_id", "seed", "policy", "attack_episodes", "total_cycles"]
    + [f"cycles_{c}" for c in CYCLE_CATEGORIES]
    + ["requests_executed", "useful_requests"]
    + list(LEVEL_COUNTERS) + list(EVENT_COUNTERS)
    + ["corrupted_reads", "squashed_corrupt_reads", "restart_required", "completed",
       "energy_total"]
    + [f"energy_{e}" for e in ENERGY_EVENTS]
)


def report_row(report: SimReport) -> Dict[str, object]:
    row = {
        "config_hash": report.config_hash,
        "trace_id": report.trace_id,
        "seed": report.seed,
        "policy": report.policy,
        "attack_episodes": ";".join(report.attack.get("episodes", [])),
        "total_cycles": report.total_cycles,
        "requests_executed": report.requests_executed,
        "useful_requests": report.useful_requests,
        "corrupted_reads": report.corrupted_reads,
        "squashed_corrupt_reads": report.squashed_corrupt_reads,
        "restart_required": int(report.restart_required),
        "completed": int(report.completed),
        "energy_total": repr(float(report.energy_total)),
    }
    row.update({f"cycles_{c}": report.cycles[c] for c in CYCLE_CATEGORIES})
    row.update(report.levels)
    row.update(report.events)
    row.update({f"energy_{e}": repr(float(report.energy_by_component.get(e, 0.0)))
                for e in ENERGY_EVENTS})
    return row


def emit_report(report: SimReport, fmt: str = "json") -> str:
    """Serialize one report.  JSON keeps insertion order; CSV is header + one row."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        return rows_to_csv([report_row(report)], CSV_COLUMNS)
    raise SimulatorError(f"unknown report format {fmt!r}")


def rows_to_csv(rows: List[Dict[str, object]], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def parse_report(text: str) -> SimReport:
    return SimReport.from_dict(json.loads(text))


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ReportWriteError(f"cannot write report to {path}: {exc}") from exc


def _same_trace(report: SimReport, baseline: SimReport) -> None:
    if report.trace_id != baseline.trace_id:
        raise SimulatorError(
            f"reports come from different traces ({report.trace_id[:12]} vs {baseline.trace_id[:12]})")


def normalized_slowdown(report: SimReport, baseline: SimReport) -> float:
    """Cycles relative to the baseline run; the simulator's stand-in for 1/normalized IPC."""
    _same_trace(report, baseline)
    if baseline.total_cycles == 0:
        return 1.0
    return report.total_cycles / baseline.total_cycles


def energy_overhead(report: SimReport, baseline: SimReport) -> float:
    _same_trace(report, baseline)
    if baseline.energy_total == 0:
        return 0.0
    return report.energy_total / baseline.energy_total - 1.0


def energy_delta_closed_form(report: SimReport, baseline: SimReport,
                             energy: EnergyModel) -> float:
    """Overhead recomputed from event-count differences alone."""
    delta = sum((report.energy_events[k] - baseline.energy_events[k]) * v
                for k, v in energy.vector().items())
    return delta / baseline.energy_total
