import random

import pytest

from sttguard import Kind, MemoryRequest, Trace, default_config

SMALL = {
    "l1.capacity": 1024, "l1.ways": 2,
    "l2.capacity": 4096, "l2.ways": 4,
    "llc.capacity": 16384, "llc.ways": 4, "llc.wb_entries": 4,
    "trace.length": 2000, "trace.working_set": 32768, "trace.locality_alpha": 0.7,
}


def small_config(**overrides):
    values = dict(SMALL)
    values.update(overrides)
    return default_config(**values)


def random_trace(seed, length=500, lines=64, write_fraction=0.3, line_size=64):
    rng = random.Random(seed)
    base = 0x4000_0000
    reqs = []
    for i in range(length):
        kind = Kind.WRITE if rng.random() < write_fraction else Kind.READ
        reqs.append(MemoryRequest(i, kind, base + rng.randrange(lines) * line_size + rng.randrange(8) * 8))
    return Trace(reqs)


def trace_of(*pairs):
    return Trace.from_pairs(pairs)


@pytest.fixture
def small():
    return small_config()
