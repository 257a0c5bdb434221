"""Countermeasures driven by the attack sensor: stall, LLC bypass, checkpoint + bypass.

Every transition runs between two requests, so no request ever observes a
half-finished flush, invalidate, checkpoint or rollback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .attack import AttackWaveform, Classification, SensorConfig, SensorReading, strength_at
from .errors import ConfigError, InvariantViolation, ProtocolError
from .hierarchy import (POISONED_VERSION, AccessOutcome, Engine, GoldenMemory, Kind,
                        MemoryRequest, ServicedBy, TraceCursor)
from .metrics import EVENT_COUNTERS


class PolicyKind(str, Enum):
    NONE = "none"
    STALL = "stall"
    BYPASS = "bypass"
    CHECKPOINT_BYPASS = "checkpoint_bypass"


class CommitMode(str, Enum):
    MASKED_BUFFER = "masked_buffer"
    VOLATILE_BIT = "volatile_bit"


@dataclass(frozen=True)
class MitigationPolicy:
    kind: PolicyKind = PolicyKind.NONE
    checkpoint_interval: float = 100_000
    adaptive_interval: bool = False
    register_save_cost: int = 100
    rollback_cost: int = 100
    invalidate_cost: int = 10
    commit_mode: CommitMode = CommitMode.MASKED_BUFFER

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "commit_mode", CommitMode(self.commit_mode))
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint.interval must be >= 1 (use inf to disable periodic checkpoints)")
        for name in ("register_save_cost", "rollback_cost", "invalidate_cost"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


class Phase(str, Enum):
    OFF = "off"
    PREPARING = "preparing"
    ACTIVE = "active"
    EXITING = "exiting"


_SUCCESSOR = {Phase.OFF: Phase.PREPARING, Phase.PREPARING: Phase.ACTIVE,
              Phase.ACTIVE: Phase.EXITING, Phase.EXITING: Phase.OFF}


@dataclass
class BypassState:
    phase: Phase = Phase.OFF

    @property
    def bp_signal(self) -> bool:
        return self.phase in (Phase.ACTIVE, Phase.EXITING)

    def advance(self, to: Phase) -> None:
        if _SUCCESSOR[self.phase] is not to:
            raise ProtocolError(f"bypass cannot go from {self.phase.value} to {to.value}")
        self.phase = to


@dataclass(frozen=True)
class Checkpoint:
    trace_index: int
    cycle_at_save: int
    golden_snapshot: GoldenMemory
    stats_snapshot: Dict[str, int] = field(default_factory=dict)


def bypass_access(engine: Engine, request: MemoryRequest, state: BypassState) -> AccessOutcome:
    """LLC-level service while BP is asserted: every LLC access is a forced miss.

    Reads come from memory and never look at LLC data.  Writes go to memory
    with no allocation; a matching LLC line is left untouched but marked stale.
    """
    if state.phase is not Phase.ACTIVE:
        raise ProtocolError(f"bypass_access while bypass is {state.phase.value}")
    engine.levels["llc_forced_misses"] += 1
    latency = engine.upper_cost + engine.mem_latency
    llc = engine.llc
    if llc is not None and engine.look_through:
        latency += llc.geometry.read_latency
    if request.kind is Kind.WRITE:
        line = llc.lookup(request.address) if llc is not None else None
        if line is not None:
            line.poisoned = True
        engine.queue_write(request.address, engine.golden.next_version)
        return AccessOutcome(ServicedBy.MEMORY, latency)
    got = engine.memory_read(request.address)
    engine.fill_l1(request.address, got)
    if llc is not None and engine.allow_fills:
        engine.energy["llc_write"] += 1
    return AccessOutcome(ServicedBy.MEMORY, latency, got)


class MitigationController:
    """Owns the policy state machines for one engine."""

    def __init__(self, policy: MitigationPolicy, engine: Engine, cursor: TraceCursor,
                 sensor: SensorConfig, waveform: AttackWaveform):
        self.policy = policy
        self.engine = engine
        self.cursor = cursor
        self.sensor = sensor
        self.waveform = waveform
        self.bypass = BypassState()
        self.events = dict.fromkeys(EVENT_COUNTERS, 0)
        self.actions: List[Tuple[int, str]] = []
        self.asserted = False
        self.classification = Classification.NONE
        self.last_reading_cycle = -1
        self.detections = 0
        self.restart_required = False
        self.verify_commits = False
        self.interval = policy.checkpoint_interval
        self.checkpointing = policy.kind is PolicyKind.CHECKPOINT_BYPASS
        self.last_checkpoint: Optional[Checkpoint] = None
        self.checkpoint_log: List[Checkpoint] = []
        self.next_checkpoint_cycle = math.inf
        if self.checkpointing:
            # the initial state is an implicit checkpoint
            self.last_checkpoint = Checkpoint(cursor.position, engine.cycle, engine.golden.copy())
            self.next_checkpoint_cycle = engine.cycle + self.interval
            self._enter_epoch()

    # -- helpers -----------------------------------------------------------
    def _log(self, action: str) -> str:
        self.actions.append((self.engine.cycle, action))
        return action

    def _enter_epoch(self) -> None:
        self.engine.speculative = True
        self.engine.buffer.masked = self.policy.commit_mode is CommitMode.MASKED_BUFFER

    def _leave_epoch(self) -> None:
        self.engine.speculative = False
        self.engine.buffer.masked = False

    def _raise_bp(self) -> str:
        self.bypass.advance(Phase.ACTIVE)
        engine, state = self.engine, self.bypass
        engine.bypass_hook = lambda request: bypass_access(engine, request, state)
        return self._log("bp_up")

    def _flush(self) -> str:
        self.engine.charge("flush", self.engine.flush_llc())
        self.events["flushes"] += 1
        return self._log("flush")

    def _invalidate(self) -> str:
        self.engine.invalidate_llc()
        self.engine.charge("invalidate", self.policy.invalidate_cost)
        self.events["invalidations"] += 1
        return self._log("invalidate")

    def sensed_now(self) -> bool:
        """Raw comparator output at the current cycle, between samples."""
        return strength_at(self.waveform, self.engine.cycle) >= self.sensor.sensor_threshold

    # -- sensor dispatch ---------------------------------------------------
    def on_sensor(self, reading: SensorReading) -> List[str]:
        if reading.cycle <= self.last_reading_cycle:
            raise ProtocolError(
                f"sensor reading at {reading.cycle} after one at {self.last_reading_cycle}")
        self.last_reading_cycle = reading.cycle
        if reading.attack_asserted == self.asserted:
            return []
        self.asserted = reading.attack_asserted
        kind = self.policy.kind
        if reading.attack_asserted:
            self.classification = reading.classification
            self.detections += 1
            if self.detections == 1 and self.policy.adaptive_interval:
                self.interval = max(1, self.interval / 2)
            if kind is PolicyKind.STALL:
                return self.stall_policy_step(reading)
            if kind is PolicyKind.BYPASS:
                self.bypass.advance(Phase.PREPARING)
                return [self._flush(), self._raise_bp()]
            if kind is PolicyKind.CHECKPOINT_BYPASS:
                self.rollback(self.last_checkpoint)
                actions = [self._log("rollback")]
                self.bypass.advance(Phase.PREPARING)
                actions.append(self._raise_bp())
                self.checkpointing = False
                self._leave_epoch()
                return actions
            return [self._log("ignored")]
        if kind is PolicyKind.STALL:
            return self.stall_policy_step(reading)
        if kind in (PolicyKind.BYPASS, PolicyKind.CHECKPOINT_BYPASS) and self.bypass.bp_signal:
            self.bypass.advance(Phase.EXITING)
            actions = [self._invalidate()]
            self.engine.bypass_hook = None
            self.bypass.advance(Phase.OFF)
            actions.append(self._log("bp_down"))
            if kind is PolicyKind.CHECKPOINT_BYPASS:
                self.checkpointing = True
                self._enter_epoch()
                self.take_checkpoint()
                actions.append("checkpoint")
            return actions
        return []

    def stall_policy_step(self, reading: SensorReading) -> List[str]:
        """Halt on assertion, invalidate the LLC and resume on deassertion.

        A gradual attack leaves time to write dirty LLC data back first; a
        sudden one does not, so the run is flagged as needing a restart.
        """
        engine = self.engine
        if reading.attack_asserted:
            actions = []
            if reading.classification is Classification.SUDDEN:
                self.restart_required = True
                actions.append(self._log("restart_required"))
            else:
                actions.append(self._flush())
            engine.halted = True
            self.events["halts"] += 1
            actions.append(self._log("halt"))
            return actions
        actions = [self._invalidate()]
        engine.halted = False
        actions.append(self._log("resume"))
        return actions

    # -- checkpointing -----------------------------------------------------
    def checkpoint_due(self) -> bool:
        if not self.checkpointing:
            return False
        return self.engine.checkpoint_needed or self.engine.cycle >= self.next_checkpoint_cycle

    def take_checkpoint(self, forced: bool = False) -> Checkpoint:
        """Commit everything, clear volatile bits, and snapshot the oracle."""
        if self.policy.kind is not PolicyKind.CHECKPOINT_BYPASS:
            raise ProtocolError("checkpoints only exist under checkpoint_bypass")
        if self.bypass.phase is not Phase.OFF:
            raise ProtocolError("cannot checkpoint while the LLC is bypassed")
        engine = self.engine
        cost = engine.write_back_all() + self.policy.register_save_cost
        engine.charge("checkpoint", cost)
        engine.energy["checkpoint_overhead"] += 1
        engine.corrupted_reads += engine.corrupt_pending
        engine.corrupt_pending = 0
        if self.verify_commits:
            self._check_committed()
        cp = Checkpoint(self.cursor.position, engine.cycle, engine.golden.copy(),
                        {"requests_executed": engine.requests_executed,
                         "corrupted_reads": engine.corrupted_reads})
        self.last_checkpoint = cp
        self.checkpoint_log.append(cp)
        self.events["checkpoints"] += 1
        if forced:
            self.events["forced_checkpoints"] += 1
        self.next_checkpoint_cycle = engine.cycle + self.interval
        self._log("checkpoint")
        return cp

    def _check_committed(self) -> None:
        engine = self.engine
        versions = engine.golden.versions
        for line, v in engine.memory.items():
            if v != POISONED_VERSION and versions.get(line, 0) != v:
                raise InvariantViolation(f"memory line {line:#x} holds v{v}, oracle v{versions.get(line, 0)}")
        for line, v in versions.items():
            if engine.memory.get(line, 0) not in (v, POISONED_VERSION):
                raise InvariantViolation(f"write to line {line:#x} (v{v}) was not committed")

    def rollback(self, checkpoint: Checkpoint) -> int:
        """Return to ``checkpoint``; everything executed since is discarded."""
        if self.bypass.phase in (Phase.PREPARING, Phase.EXITING):
            raise ProtocolError(f"rollback during bypass {self.bypass.phase.value}")
        engine = self.engine
        redo = self.cursor.position - checkpoint.trace_index
        if redo < 0:
            raise ProtocolError("checkpoint lies ahead of the trace cursor")
        self.cursor.seek(checkpoint.trace_index)
        engine.golden = checkpoint.golden_snapshot.copy()
        engine.discard_speculative()
        engine.squashed_corrupt_reads += engine.corrupt_pending
        engine.corrupt_pending = 0
        engine.charge("rollback", self.policy.rollback_cost)
        self.events["rollbacks"] += 1
        self.events["re_executed_requests"] += redo
        return redo
