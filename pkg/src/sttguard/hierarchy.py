"""Trace-driven L1 -> L2 -> {LLC || memory} engine with a golden-memory oracle.

Placement rules (exclusive hierarchy):

* memory fills install into L1; an L2 read hit moves the line to L1 and an
  LLC read hit moves it to L2, so a line climbs one level per reuse;
* victims move down one level (L1 -> L2 -> LLC); dirty LLC victims leave
  through the LLC write buffer;
* write hits update the line in place at whichever level holds it; a write
  that misses every level is not allocated and goes to memory through the
  write buffer.

The LLC is probed in parallel with the memory controller, so an LLC miss
costs ``L1 + L2 + memory`` rather than ``L1 + L2 + LLC + memory``.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from collections.abc import Sequence
from typing import Callable, Dict, Iterable, List, Optional

from .attack import HazardClock
from .cache import BankedWriteBuffer, BufferEntry, CacheLevel, Evicted, counter_uniform
from .errors import ConfigError, HaltedError, InvariantViolation, TraceError
from .metrics import CYCLE_CATEGORIES, ENERGY_EVENTS, LEVEL_COUNTERS

# Version token stored in memory when a poisoned line is written back.
POISONED_VERSION = -1


class Kind(str, Enum):
    READ = "R"
    WRITE = "W"


class ServicedBy(str, Enum):
    L1 = "L1"
    L2 = "L2"
    LLC = "LLC"
    MEMORY = "memory"


@dataclass(frozen=True)
class MemoryRequest:
    index: int
    kind: Kind
    address: int

    @property
    def is_write(self) -> bool:
        return self.kind is Kind.WRITE


@dataclass(frozen=True)
class AccessOutcome:
    serviced_by: ServicedBy
    latency: int
    returned_version: Optional[int] = None
    corrupted: bool = False


class Trace(Sequence):
    """An immutable, indexable request stream with a content hash."""

    def __init__(self, requests: Iterable[MemoryRequest]):
        self.requests = tuple(requests)
        for i, r in enumerate(self.requests):
            if r.index != i:
                raise TraceError(f"request indices must be dense from 0; got {r.index} at {i}")
        h = hashlib.sha256()
        for r in self.requests:
            h.update(f"{r.kind.value} {r.address:x}\n".encode())
        self.trace_id = h.hexdigest()

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "Trace":
        return cls(MemoryRequest(i, Kind(k), int(a)) for i, (k, a) in enumerate(pairs))

    def __getitem__(self, i):
        return self.requests[i]

    def __len__(self):
        return len(self.requests)


def parse_trace(lines: Iterable[str]) -> Trace:
    """Parse ``R <hex>`` / ``W <hex>`` lines; ``#`` starts a comment."""
    pairs = []
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2 or parts[0].upper() not in ("R", "W"):
            raise TraceError(f"line {lineno}: expected 'R <hex>' or 'W <hex>', got {raw.rstrip()!r}")
        try:
            address = int(parts[1], 16)
        except ValueError:
            raise TraceError(f"line {lineno}: bad hex address {parts[1]!r}") from None
        if not 0 <= address < 1 << 64:
            raise TraceError(f"line {lineno}: address outside 64 bits")
        pairs.append((parts[0].upper(), address))
    return Trace.from_pairs(pairs)


def read_trace(path) -> Trace:
    try:
        with open(path) as fh:
            return parse_trace(fh)
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc


def format_trace(trace: Iterable[MemoryRequest], header: str = "") -> str:
    out = [f"# {line}" for line in header.splitlines()] if header else []
    out.extend(f"{r.kind.value} {r.address:#x}" for r in trace)
    return "\n".join(out) + "\n"


class TraceCursor:
    """Position in a trace; rollback seeks it backwards."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.position = 0

    def done(self) -> bool:
        return self.position >= len(self.trace)

    def next(self) -> MemoryRequest:
        request = self.trace[self.position]
        self.position += 1
        return request

    def seek(self, position: int) -> None:
        if not 0 <= position <= len(self.trace):
            raise IndexError(position)
        self.position = position


class GoldenMemory:
    """Architectural truth: the version of the latest write to every line."""

    def __init__(self, line_size: int = 64):
        self.shift = line_size.bit_length() - 1
        self.versions: Dict[int, int] = {}
        self.next_version = 1

    def copy(self) -> "GoldenMemory":
        other = GoldenMemory.__new__(GoldenMemory)
        other.shift = self.shift
        other.versions = dict(self.versions)
        other.next_version = self.next_version
        return other

    def expected(self, address: int) -> int:
        return self.versions.get(address >> self.shift, 0)

    def __eq__(self, other):
        if not isinstance(other, GoldenMemory):
            return NotImplemented
        return self.versions == other.versions and self.next_version == other.next_version

    __hash__ = None


def golden_apply(golden: GoldenMemory, request: MemoryRequest) -> int:
    """Advance the oracle by one request and return the version it implies."""
    if request.kind is Kind.WRITE:
        version = golden.next_version
        golden.versions[request.address >> golden.shift] = version
        golden.next_version = version + 1
        return version
    return golden.versions.get(request.address >> golden.shift, 0)


def replay_golden(requests: Iterable[MemoryRequest], line_size: int = 64) -> GoldenMemory:
    golden = GoldenMemory(line_size)
    for r in requests:
        golden_apply(golden, r)
    return golden


def verify_outcome(outcome: AccessOutcome, expected: int) -> bool:
    """True when the read is correct: unpoisoned and matching the oracle."""
    return not outcome.corrupted and outcome.returned_version == expected


class Engine:
    """Single-stream cache hierarchy with cycle and event accounting.

    The mitigation layer drives it through ``bypass_hook`` (the forced-miss
    path), ``halted``, ``speculative`` (checkpoint epochs) and the write buffer
    masking.
    """

    def __init__(self, l1: CacheLevel, l2: CacheLevel, llc: Optional[CacheLevel],
                 mem_latency: int = 100, *, look_through: bool = False,
                 hazard: Optional[HazardClock] = None, seed: int = 0,
                 wb_banks: int = 4, wb_entries: int = 8, allow_fills: bool = False):
        sizes = {l1.geometry.line_size, l2.geometry.line_size}
        if llc is not None:
            sizes.add(llc.geometry.line_size)
        if len(sizes) != 1:
            raise ConfigError("all cache levels must share one line size")
        line_size = sizes.pop()
        self.l1, self.l2, self.llc = l1, l2, llc
        self.line_size = line_size
        self.shift = line_size.bit_length() - 1
        self.mem_latency = mem_latency
        self.look_through = look_through
        self.hazard = hazard
        self.seed = seed
        self.allow_fills = allow_fills
        self.buffer = BankedWriteBuffer(wb_banks, wb_entries, line_size)
        self.memory: Dict[int, int] = {}
        self.golden = GoldenMemory(line_size)
        self.cycle = 0
        self.cycles = dict.fromkeys(CYCLE_CATEGORIES, 0)
        self.levels = dict.fromkeys(LEVEL_COUNTERS, 0)
        self.energy = dict.fromkeys(ENERGY_EVENTS, 0)
        self.requests_executed = 0
        self.corrupted_reads = 0
        self.corrupt_pending = 0
        self.squashed_corrupt_reads = 0
        self.halted = False
        self.speculative = False
        self.bypass_hook: Optional[Callable[[MemoryRequest], AccessOutcome]] = None
        self.checkpoint_needed = False
        self._victims: deque = deque()
        self._outbound: deque = deque()
        # False only when the write buffer is known to be empty
        self._buffered = False
        self._hz_cycle = -1
        self._hz_value = 0.0

    # -- corruption -------------------------------------------------------
    def hazard_now(self) -> float:
        if self.hazard is None:
            return 0.0
        if self._hz_cycle != self.cycle:
            self._hz_cycle = self.cycle
            self._hz_value = self.hazard.at(self.cycle)
        return self._hz_value

    def expose(self, line) -> bool:
        """Settle the LLC line's flip draw for the time since it was last checked."""
        if self.hazard is None or line.poisoned:
            return line.poisoned
        now = self.hazard_now()
        d = now - line.hazard
        line.hazard = now
        if d > 0.0:
            if counter_uniform(self.seed, self.cycle, line.set_index, line.way) < -math.expm1(-d):
                line.poisoned = True
        return line.poisoned

    # -- memory side ------------------------------------------------------
    def memory_read(self, address: int) -> int:
        """Version seen by the memory controller, pending buffer entries included."""
        self.levels["mem_reads"] += 1
        self.energy["mem_access"] += 1
        address = address >> self.shift << self.shift
        entry = self.buffer.newest(address)
        if entry is None:
            for pending in reversed(self._outbound):
                if pending.address == address:
                    entry = pending
                    break
        if entry is not None:
            return POISONED_VERSION if entry.poisoned else entry.version
        return self.memory.get(address >> self.shift, 0)

    def queue_write(self, address: int, version: int, poisoned: bool = False) -> None:
        """Send data toward memory through the LLC write buffer."""
        aligned = address >> self.shift << self.shift
        self._outbound.append(BufferEntry(aligned, version, poisoned, self.speculative))

    def commit(self, entry: BufferEntry) -> None:
        self.memory[entry.address >> self.shift] = POISONED_VERSION if entry.poisoned else entry.version
        self.levels["mem_writes"] += 1
        self.energy["mem_access"] += 1

    def commit_direct(self, address: int, version: int, poisoned: bool) -> None:
        """Write-back that passes straight through an unmasked buffer slot."""
        self.energy["buffer_op"] += 1
        self.commit(BufferEntry(address >> self.shift << self.shift, version, poisoned))

    # -- the request path -------------------------------------------------
    def step(self, request: MemoryRequest) -> AccessOutcome:
        """Execute one request, check it against the oracle, route evictions."""
        outcome = self.access(request)
        expected = golden_apply(self.golden, request)
        self.requests_executed += 1
        self.cycle += outcome.latency
        self.cycles["access"] += outcome.latency
        if request.kind is Kind.READ and not verify_outcome(outcome, expected):
            if self.speculative:
                self.corrupt_pending += 1
            else:
                self.corrupted_reads += 1
        self.drain_evictions()
        return outcome

    @property
    def upper_cost(self) -> int:
        return self.l1.geometry.read_latency + self.l2.geometry.read_latency

    def access(self, request: MemoryRequest) -> AccessOutcome:
        if self.halted:
            raise HaltedError(f"engine halted; request {request.index} refused")
        address = request.address
        write = request.kind is Kind.WRITE
        version = self.golden.next_version if write else 0
        levels, energy = self.levels, self.energy
        l1, l2 = self.l1, self.l2

        energy["l1_access"] += 1
        line = l1.lookup(address)
        if line is not None:
            levels["l1_hits"] += 1
            l1.touch(line)
            if write:
                self._write_line(line, version)
                return AccessOutcome(ServicedBy.L1, l1.geometry.write_latency)
            return AccessOutcome(ServicedBy.L1, l1.geometry.read_latency, line.version, line.poisoned)
        levels["l1_misses"] += 1
        latency = l1.geometry.read_latency

        energy["l2_access"] += 1
        line = l2.lookup(address)
        if line is not None:
            levels["l2_hits"] += 1
            if write:
                l2.touch(line)
                self._write_line(line, version)
                return AccessOutcome(ServicedBy.L2, latency + l2.geometry.write_latency)
            moved = l2.remove(address)
            self.fill_l1(address, moved.version, moved.dirty, moved.poisoned, moved.volatile)
            return AccessOutcome(ServicedBy.L2, latency + l2.geometry.read_latency,
                                 moved.version, moved.poisoned)
        levels["l2_misses"] += 1
        latency += l2.geometry.read_latency

        if self.bypass_hook is not None:
            return self.bypass_hook(request)

        llc = self.llc
        if llc is not None:
            line = llc.lookup(address)
            if line is not None:
                levels["llc_hits"] += 1
                self.expose(line)
                if write:
                    energy["llc_write"] += 1
                    llc.touch(line)
                    self._write_line(line, version)
                    return AccessOutcome(ServicedBy.LLC, latency + llc.geometry.write_latency)
                energy["llc_read"] += 1
                moved = llc.remove(address)
                self._fill_l2(address, moved)
                return AccessOutcome(ServicedBy.LLC, latency + llc.geometry.read_latency,
                                     moved.version, moved.poisoned)
            levels["llc_misses"] += 1
            if self.look_through:
                latency += llc.geometry.read_latency
        return self.memory_path(request, latency, version)

    def memory_path(self, request: MemoryRequest, latency: int, version: int) -> AccessOutcome:
        """Service a request the caches could not: fill on read, no-allocate on write."""
        latency += self.mem_latency
        if request.kind is Kind.WRITE:
            self.queue_write(request.address, version)
            return AccessOutcome(ServicedBy.MEMORY, latency)
        got = self.memory_read(request.address)
        self.fill_l1(request.address, got, False, False, False)
        return AccessOutcome(ServicedBy.MEMORY, latency, got)

    def _write_line(self, line, version: int) -> None:
        line.version = version
        line.dirty = True
        if self.speculative:
            line.volatile_flag = True

    def fill_l1(self, address, version, dirty=False, poisoned=False, volatile=False) -> None:
        self.energy["l1_access"] += 1
        victim = self.l1.insert(address, version, dirty, poisoned, volatile)
        if victim is not None:
            self._victims.append(("l1", victim))

    def _fill_l2(self, address, moved: Evicted) -> None:
        self.energy["l2_access"] += 1
        victim = self.l2.insert(address, moved.version, moved.dirty, moved.poisoned, moved.volatile)
        if victim is not None:
            self._victims.append(("l2", victim))

    # -- background traffic -----------------------------------------------
    def drain_evictions(self) -> int:
        """Route queued victims downward and push memory writes into the buffer.

        Write-backs are off the critical path, so no cycles are charged.  When
        a push meets a full bank the remaining writes stay queued and
        ``checkpoint_needed`` is raised; the next checkpoint commits them.
        """
        if not (self._victims or self._outbound or self._buffered):
            return 0
        while self._victims:
            src, ev = self._victims.popleft()
            if src == "l1":
                self.energy["l2_access"] += 1
                victim = self.l2.insert(ev.address, ev.version, ev.dirty, ev.poisoned, ev.volatile)
                if victim is not None:
                    self._victims.append(("l2", victim))
            else:
                self._evict_to_llc(ev)
        buffer = self.buffer
        while self._outbound:
            entry = self._outbound[0]
            if not buffer.push(entry):
                self.checkpoint_needed = True
                break
            self._outbound.popleft()
            self.energy["buffer_op"] += 1
        for entry in buffer.drain():
            self.commit(entry)
        self._buffered = len(buffer) > 0
        return 0

    def _evict_to_llc(self, ev: Evicted) -> None:
        llc = self.llc
        if llc is None or self.bypass_hook is not None:
            if llc is not None and self.allow_fills:
                # refill into an untrusted LLC costs energy but is never read back
                self.energy["llc_write"] += 1
            if ev.dirty:
                self.queue_write(ev.address, ev.version, ev.poisoned)
            return
        victim_line = llc.peek_victim(ev.address)
        if victim_line is not None:
            self.expose(victim_line)
        self.energy["llc_write"] += 1
        victim = llc.insert(ev.address, ev.version, ev.dirty, ev.poisoned, ev.volatile,
                            hazard=self.hazard_now())
        if victim is not None and victim.dirty:
            self.queue_write(victim.address, victim.version, victim.poisoned)

    # -- whole-cache operations used by the mitigation layer -------------
    def flush_llc(self) -> int:
        """Write back dirty LLC lines, invalidate the LLC; returns cycles spent."""
        llc = self.llc
        if llc is None:
            return 0
        for line in llc.dirty_lines():
            self.expose(line)
        written = llc.flush()
        for wb in written:
            self.energy["llc_read"] += 1
            self.commit_direct(wb.address, wb.version, wb.poisoned)
        return len(written) * (llc.geometry.read_latency + self.mem_latency)

    def invalidate_llc(self) -> int:
        return 0 if self.llc is None else self.llc.invalidate_all()

    def write_back_all(self) -> int:
        """Commit the buffer, queued writes, then every dirty line (lines stay valid).

        Returns the cycles spent on the line write-backs.
        """
        for entry in self.buffer.drain(force=True):
            self.commit(entry)
        while self._outbound:
            entry = self._outbound.popleft()
            self.energy["buffer_op"] += 1
            self.commit(entry)
        cost = 0
        for level in self.levels_present():
            for line in level.dirty_lines():
                if level is self.llc:
                    self.expose(line)
                self.commit_direct(line.line_addr << self.shift, line.version, line.poisoned)
                line.dirty = False
                cost += level.geometry.read_latency + self.mem_latency
            level.clear_volatile()
        self.checkpoint_needed = False
        return cost

    def discard_speculative(self) -> None:
        """Drop every cache line and all uncommitted writes (rollback)."""
        for level in self.levels_present():
            level.invalidate_all()
        self.buffer.discard()
        self._outbound.clear()
        self._victims.clear()
        self.checkpoint_needed = False

    def levels_present(self) -> List[CacheLevel]:
        return [lvl for lvl in (self.l1, self.l2, self.llc) if lvl is not None]

    def charge(self, category: str, cycles: int) -> None:
        self.cycle += cycles
        self.cycles[category] += cycles

    # -- invariants --------------------------------------------------------
    def check_exclusivity(self) -> None:
        """Full scan: every line address is valid in at most one level.

        LLC contents are ignored while the bypass path is active, since they
        are untrusted and never read.
        """
        seen: Dict[int, str] = {}
        levels = [self.l1, self.l2]
        if self.llc is not None and self.bypass_hook is None:
            levels.append(self.llc)
        for level in levels:
            for line in level.lines():
                other = seen.get(line.line_addr)
                if other is not None:
                    raise InvariantViolation(
                        f"line {line.line_addr << self.shift:#x} valid in both {other} and {level.name}")
                seen[line.line_addr] = level.name

    def committed_state(self) -> Dict[int, int]:
        return {k: v for k, v in self.memory.items() if v != 0}
