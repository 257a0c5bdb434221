"""Set-associative cache level, line flags, and the banked LLC write buffer.

Data is modelled as write-version tokens rather than bytes: a line is
correct when the version it returns matches the golden oracle and it has
not been poisoned by the attack.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional

from .errors import ConfigError

_MASK64 = (1 << 64) - 1


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def counter_uniform(seed: int, cycle: int, set_index: int, way: int) -> float:
    """Uniform [0, 1) draw keyed by (seed, cycle, set, way).

    Counter-based, so the value never depends on the order lines are visited.
    """
    h = _splitmix((seed & _MASK64) ^ _splitmix(cycle ^ _splitmix(set_index ^ _splitmix(way))))
    return (h >> 11) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class CacheGeometry:
    capacity: int
    ways: int
    line_size: int = 64
    read_latency: int = 1
    write_latency: int = 1
    banks: int = 1
    write_buffer_entries: int = 8

    def __post_init__(self):
        for name in ("capacity", "ways", "line_size", "read_latency",
                     "write_latency", "banks", "write_buffer_entries"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.line_size & (self.line_size - 1):
            raise ConfigError(f"line_size must be a power of two, got {self.line_size}")
        if self.capacity % (self.ways * self.line_size * self.banks):
            raise ConfigError(
                f"capacity {self.capacity} not divisible by ways*line_size*banks")

    @property
    def num_sets(self) -> int:
        return self.capacity // (self.ways * self.line_size)

    @property
    def offset_bits(self) -> int:
        return self.line_size.bit_length() - 1


class CacheLine:
    __slots__ = ("set_index", "way", "tag", "line_addr", "valid", "dirty", "poisoned",
                 "volatile_flag", "version", "stamp", "hazard")

    def __init__(self, set_index: int, way: int):
        self.set_index = set_index
        self.way = way
        self.tag = 0
        self.line_addr = -1
        self.valid = False
        self.dirty = False
        self.poisoned = False
        self.volatile_flag = False
        self.version = 0
        self.stamp = 0
        # cumulative flip hazard at the last corruption check
        self.hazard = 0.0

    def __repr__(self):
        flags = "".join(c for c, on in zip("VDPX", (self.valid, self.dirty, self.poisoned,
                                                     self.volatile_flag)) if on)
        return f"<line set={self.set_index} way={self.way} addr={self.line_addr:#x} v{self.version} {flags}>"


class Evicted(NamedTuple):
    address: int
    version: int
    dirty: bool
    poisoned: bool = False
    volatile: bool = False


class WriteBack(NamedTuple):
    address: int
    version: int
    poisoned: bool = False


class CacheLevel:
    """One level of the hierarchy.  Sets are allocated on first touch."""

    def __init__(self, name: str, geometry: CacheGeometry):
        self.name = name
        self.geometry = geometry
        self.num_sets = geometry.num_sets
        self.ways = geometry.ways
        self._shift = geometry.offset_bits
        self._sets: Dict[int, List[CacheLine]] = {}
        self._index: Dict[int, CacheLine] = {}
        self._clock = 0

    # -- addressing -------------------------------------------------------
    def line_addr(self, address: int) -> int:
        return address >> self._shift

    def address_of(self, line_addr: int) -> int:
        return line_addr << self._shift

    def set_of(self, address: int) -> int:
        return (address >> self._shift) % self.num_sets

    # -- probe / fill -----------------------------------------------------
    def lookup(self, address: int) -> Optional[CacheLine]:
        """Return the valid line holding ``address`` or None.  No state changes."""
        return self._index.get(address >> self._shift)

    def __contains__(self, address: int) -> bool:
        return (address >> self._shift) in self._index

    def __len__(self) -> int:
        return len(self._index)

    def touch(self, line: CacheLine) -> None:
        self._clock += 1
        line.stamp = self._clock

    def _set(self, set_index: int) -> List[CacheLine]:
        ways = self._sets.get(set_index)
        if ways is None:
            ways = [CacheLine(set_index, w) for w in range(self.ways)]
            self._sets[set_index] = ways
        return ways

    def insert(self, address: int, version: int, dirty: bool, poisoned: bool = False,
               volatile: bool = False, hazard: float = 0.0) -> Optional[Evicted]:
        """Install ``address`` as MRU and return the LRU victim if the set was full."""
        la = address >> self._shift
        line = self._index.get(la)
        if line is not None:
            line.version = version
            line.dirty = line.dirty or dirty
            line.poisoned = line.poisoned or poisoned
            line.volatile_flag = line.volatile_flag or volatile
            self.touch(line)
            return None
        ways = self._set(la % self.num_sets)
        evicted = None
        slot = None
        for cand in ways:
            if not cand.valid:
                slot = cand
                break
        if slot is None:
            slot = min(ways, key=_stamp)
            evicted = Evicted(slot.line_addr << self._shift, slot.version, slot.dirty,
                              slot.poisoned, slot.volatile_flag)
            del self._index[slot.line_addr]
        slot.line_addr = la
        slot.tag = la // self.num_sets
        slot.valid = True
        slot.dirty = dirty
        slot.poisoned = poisoned
        slot.volatile_flag = volatile
        slot.version = version
        slot.hazard = hazard
        self.touch(slot)
        self._index[la] = slot
        return evicted

    def peek_victim(self, address: int) -> Optional[CacheLine]:
        """The line ``insert(address)`` would evict, without evicting it."""
        la = address >> self._shift
        if la in self._index:
            return None
        ways = self._sets.get(la % self.num_sets)
        if ways is None or any(not w.valid for w in ways):
            return None
        return min(ways, key=_stamp)

    def remove(self, address: int) -> Optional[Evicted]:
        """Invalidate one line (used when a line moves to another level)."""
        line = self._index.pop(address >> self._shift, None)
        if line is None:
            return None
        out = Evicted(address >> self._shift << self._shift, line.version, line.dirty,
                      line.poisoned, line.volatile_flag)
        _clear(line)
        return out

    def lru_rank(self, line: CacheLine) -> int:
        """0 for the MRU line of its set, ways-1 for the LRU one."""
        ways = self._sets[line.set_index]
        return sum(1 for w in ways if w.valid and w.stamp > line.stamp)

    # -- bulk operations --------------------------------------------------
    def lines(self) -> Iterator[CacheLine]:
        """Valid lines in ascending (set, way) order."""
        for s in sorted(self._sets):
            for line in self._sets[s]:
                if line.valid:
                    yield line

    def dirty_lines(self) -> List[CacheLine]:
        return [line for line in self.lines() if line.dirty]

    def flush(self) -> List[WriteBack]:
        """Write back every dirty line once, then invalidate everything."""
        out = [WriteBack(line.line_addr << self._shift, line.version, line.poisoned)
               for line in self.lines() if line.dirty]
        self.invalidate_all()
        return out

    def invalidate_all(self) -> int:
        """Drop every line, discarding dirty data.  Returns how many were valid."""
        count = len(self._index)
        for line in self._index.values():
            _clear(line)
        self._index.clear()
        return count

    def apply_corruption(self, flip_prob: float, cycle: int, rng_seed: int) -> int:
        """Poison each valid clean-of-poison line with probability ``flip_prob``."""
        if not 0.0 <= flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0, 1], got {flip_prob!r}")
        if flip_prob == 0.0:
            return 0
        hit = 0
        for line in self.lines():
            if line.poisoned:
                continue
            if flip_prob == 1.0 or counter_uniform(rng_seed, cycle, line.set_index, line.way) < flip_prob:
                line.poisoned = True
                hit += 1
        return hit

    def clear_volatile(self) -> None:
        for line in self._index.values():
            line.volatile_flag = False


def _stamp(line: CacheLine) -> int:
    return line.stamp


def _clear(line: CacheLine) -> None:
    line.valid = False
    line.dirty = False
    line.poisoned = False
    line.volatile_flag = False
    line.line_addr = -1


class BufferEntry(NamedTuple):
    address: int
    version: int
    poisoned: bool = False
    volatile: bool = False


class WriteBuffer:
    """Bounded FIFO between the LLC and main memory.

    While ``masked`` nothing drains.  Entries flagged volatile are also held
    back (together with everything queued behind them) until they are
    committed by a checkpoint.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("write buffer capacity must be >= 1")
        self.capacity = capacity
        self.masked = False
        self.entries: deque = deque()
        self.pushed = 0
        self.drained = 0
        self.discarded = 0

    def __len__(self):
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def push(self, entry: BufferEntry) -> bool:
        """Queue ``entry``; returns False (the full signal) instead of dropping it."""
        if len(self.entries) >= self.capacity:
            return False
        self.entries.append(entry)
        self.pushed += 1
        return True

    def drain(self, force: bool = False) -> List[BufferEntry]:
        if self.masked and not force:
            return []
        out = []
        while self.entries and (force or not self.entries[0].volatile):
            out.append(self.entries.popleft())
        self.drained += len(out)
        return out

    def discard(self) -> int:
        n = len(self.entries)
        self.entries.clear()
        self.discarded += n
        return n

    def newest(self, address: int) -> Optional[BufferEntry]:
        for entry in reversed(self.entries):
            if entry.address == address:
                return entry
        return None


class BankedWriteBuffer:
    """One WriteBuffer per LLC bank, selected by line address."""

    def __init__(self, banks: int, entries_per_bank: int, line_size: int):
        self.banks = [WriteBuffer(entries_per_bank) for _ in range(banks)]
        self._shift = line_size.bit_length() - 1

    def bank(self, address: int) -> WriteBuffer:
        return self.banks[(address >> self._shift) % len(self.banks)]

    @property
    def masked(self) -> bool:
        return self.banks[0].masked

    @masked.setter
    def masked(self, value: bool) -> None:
        for b in self.banks:
            b.masked = value

    def __len__(self):
        return sum(len(b) for b in self.banks)

    @property
    def any_full(self) -> bool:
        return any(b.full for b in self.banks)

    def push(self, entry: BufferEntry) -> bool:
        return self.bank(entry.address).push(entry)

    def drain(self, force: bool = False) -> List[BufferEntry]:
        if self.banks[0].masked and not force:
            return []
        out = []
        for b in self.banks:
            out.extend(b.drain(force))
        return out

    def discard(self) -> int:
        return sum(b.discard() for b in self.banks)

    def newest(self, address: int) -> Optional[BufferEntry]:
        return self.bank(address).newest(address)

    def counts(self) -> Dict[str, int]:
        return {"pushed": sum(b.pushed for b in self.banks),
                "drained": sum(b.drained for b in self.banks),
                "discarded": sum(b.discarded for b in self.banks),
                "resident": len(self)}
