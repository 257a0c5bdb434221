"""Synthetic request streams with Zipf-distributed line reuse.

Line popularity follows ``p(rank) ~ (rank + 1) ** -alpha`` over the lines of
the working set, with ranks scattered over the address range by a seeded
permutation.  A ``stride_mix`` fraction of requests continue a sequential run
from the previous line instead of drawing a fresh rank.
"""

from __future__ import annotations

import numpy as np

from .config import SyntheticTraceSpec
from .errors import ReportWriteError
from .hierarchy import Kind, MemoryRequest, Trace, format_trace

BASE_ADDRESS = 0x1000_0000


def zipf_weights(n: int, alpha: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -alpha
    return w / w.sum()


def generate_lines(spec: SyntheticTraceSpec, seed: int):
    """Return (line numbers, is_write, zipf ranks) as numpy arrays."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_lines = spec.working_set // spec.line_size
    length = spec.length
    perm = rng.permutation(n_lines)
    ranks = rng.choice(n_lines, size=length, p=zipf_weights(n_lines, spec.locality_alpha))
    stride = rng.random(length) < spec.stride_mix
    writes = rng.random(length) < spec.write_fraction
    if length:
        stride[0] = False
    # each strided request continues from the last freshly drawn line
    pos = np.arange(length)
    anchor = np.maximum.accumulate(np.where(stride, 0, pos)) if length else pos
    lines = (perm[ranks[anchor]] + (pos - anchor)) % n_lines
    return lines, writes, ranks


def gen_trace(spec: SyntheticTraceSpec, seed: int) -> Trace:
    lines, writes, _ = generate_lines(spec, seed)
    rng = np.random.Generator(np.random.PCG64([seed, 1]))
    offsets = rng.integers(0, spec.line_size // 8, size=len(lines)) * 8
    addresses = BASE_ADDRESS + lines * spec.line_size + offsets
    return Trace(MemoryRequest(i, Kind.WRITE if w else Kind.READ, int(a))
                 for i, (w, a) in enumerate(zip(writes.tolist(), addresses.tolist())))


def spec_header(spec: SyntheticTraceSpec, seed: int) -> str:
    return (f"synthetic trace: length={spec.length} working_set={spec.working_set} "
            f"locality_alpha={spec.locality_alpha!r} write_fraction={spec.write_fraction!r} "
            f"stride_mix={spec.stride_mix!r} seed={seed}")


def write_trace(path, trace: Trace, header: str = "") -> None:
    try:
        with open(path, "w") as fh:
            fh.write(format_trace(trace, header))
    except OSError as exc:
        raise ReportWriteError(f"cannot write trace to {path}: {exc}") from exc


def reuse_distances(addresses, line_size: int = 64) -> np.ndarray:
    """Stack distance (distinct lines touched since the previous use) per reuse."""
    last = {}
    stack: list = []
    out = []
    for a in addresses:
        line = a // line_size
        if line in last:
            idx = len(stack) - 1 - stack[::-1].index(line)
            out.append(len(stack) - 1 - idx)
            del stack[idx]
        last[line] = True
        stack.append(line)
    return np.asarray(out, dtype=np.int64)
