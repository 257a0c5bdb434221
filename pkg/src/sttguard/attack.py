"""Attack waveforms, the threshold sensor array, and the cumulative flip hazard.

Strength is expressed in normalized units where the sensor cells fail at 1.0
and the functional cells at ``MtjParams.critical_strength``.  Episodes are
half-open cycle intervals ``[start_cycle, end_cycle)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigError, DomainError
from .physics import MtjParams, flip_rate


class Profile(str, Enum):
    RAMP = "ramp"
    STEP = "step"


class Classification(str, Enum):
    NONE = "none"
    GRADUAL = "gradual"
    SUDDEN = "sudden"


@dataclass(frozen=True)
class AttackEpisode:
    start_cycle: int
    end_cycle: int
    profile: Profile
    peak_strength: float

    def __post_init__(self):
        object.__setattr__(self, "profile", Profile(self.profile))
        if self.start_cycle < 0 or self.start_cycle >= self.end_cycle:
            raise ConfigError(
                f"episode needs 0 <= start < end, got [{self.start_cycle}, {self.end_cycle})")
        if not self.peak_strength >= 0:
            raise ConfigError(f"peak strength must be >= 0, got {self.peak_strength!r}")

    @classmethod
    def parse(cls, text: str) -> "AttackEpisode":
        """Parse ``"<start>,<end>,<ramp|step>,<peak>"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ConfigError(f"attack.episode needs 4 comma-separated fields: {text!r}")
        try:
            return cls(int(parts[0]), int(parts[1]), Profile(parts[2]), float(parts[3]))
        except ValueError as exc:
            raise ConfigError(f"bad attack.episode {text!r}: {exc}") from None

    def format(self) -> str:
        return f"{self.start_cycle},{self.end_cycle},{self.profile.value},{self.peak_strength!r}"

    def strength(self, cycle: float) -> float:
        if not self.start_cycle <= cycle < self.end_cycle:
            return 0.0
        if self.profile is Profile.STEP:
            return self.peak_strength
        span = self.end_cycle - self.start_cycle
        return self.peak_strength * (cycle - self.start_cycle) / span


@dataclass(frozen=True)
class AttackWaveform:
    episodes: tuple = ()

    def __post_init__(self):
        episodes = tuple(self.episodes)
        object.__setattr__(self, "episodes", episodes)
        for prev, nxt in zip(episodes, episodes[1:]):
            if nxt.start_cycle < prev.end_cycle:
                raise ConfigError("attack episodes must be sorted and non-overlapping")
        object.__setattr__(self, "_starts", [e.start_cycle for e in episodes])

    def episode_index_at(self, cycle: float) -> Optional[int]:
        i = bisect.bisect_right(self._starts, cycle) - 1
        if i >= 0 and cycle < self.episodes[i].end_cycle:
            return i
        return None


def strength_at(waveform: AttackWaveform, cycle: float) -> float:
    if cycle < 0:
        raise DomainError(f"cycle must be non-negative, got {cycle!r}")
    i = waveform.episode_index_at(cycle)
    return 0.0 if i is None else waveform.episodes[i].strength(cycle)


@dataclass(frozen=True)
class SensorConfig:
    sensor_threshold: float = 1.0
    functional_threshold: float = 2.0
    sample_interval: int = 100
    lead_cycles: int = 200_000

    def __post_init__(self):
        if not 0 < self.sensor_threshold < self.functional_threshold:
            raise ConfigError("need 0 < sensor_threshold < functional_threshold")
        if self.sample_interval < 1 or self.lead_cycles < 1:
            raise ConfigError("sample_interval and lead_cycles must be >= 1")


@dataclass(frozen=True)
class SensorReading:
    cycle: int
    attack_asserted: bool
    classification: Classification
    strength: float


def _ceil_to(value: float, step: int) -> int:
    return int(math.ceil(value / step)) * step


def first_asserted_sample(config: SensorConfig, episode: AttackEpisode) -> Optional[int]:
    """First sample cycle inside ``episode`` at which the sensor asserts, if any."""
    interval = config.sample_interval
    earliest = _ceil_to(episode.start_cycle, interval)
    thr = config.sensor_threshold
    if episode.peak_strength < thr:
        return None
    if episode.profile is Profile.STEP:
        return earliest if earliest < episode.end_cycle else None
    span = episode.end_cycle - episode.start_cycle
    crossing = episode.start_cycle + thr / episode.peak_strength * span
    t = max(earliest, _ceil_to(crossing, interval))
    # analytic guess, then settle float rounding either way
    while t - interval >= earliest and episode.strength(t - interval) >= thr:
        t -= interval
    while t < episode.end_cycle and episode.strength(t) < thr:
        t += interval
    return t if t < episode.end_cycle else None


def first_functional_cycle(config: SensorConfig, episode: AttackEpisode) -> Optional[int]:
    """First integer cycle where the strength reaches the functional threshold."""
    thr = config.functional_threshold
    if episode.peak_strength < thr:
        return None
    if episode.profile is Profile.STEP:
        return episode.start_cycle
    span = episode.end_cycle - episode.start_cycle
    c = max(episode.start_cycle,
            int(math.ceil(episode.start_cycle + thr / episode.peak_strength * span)))
    while c - 1 >= episode.start_cycle and episode.strength(c - 1) >= thr:
        c -= 1
    while c < episode.end_cycle and episode.strength(c) < thr:
        c += 1
    return c if c < episode.end_cycle else None


def classify_episode(config: SensorConfig, episode: AttackEpisode) -> Classification:
    first = first_asserted_sample(config, episode)
    if first is None:
        return Classification.NONE
    if episode.strength(first) >= config.functional_threshold:
        return Classification.SUDDEN
    return Classification.GRADUAL


def sample_sensor(config: SensorConfig, waveform: AttackWaveform, cycle: int) -> SensorReading:
    """Read the noiseless sensor comparator at a sample instant.

    The classification is fixed by the first asserting sample of the episode,
    so a ramp that later exceeds the functional threshold stays ``gradual``.
    """
    if cycle % config.sample_interval:
        raise DomainError(f"cycle {cycle} is not a multiple of {config.sample_interval}")
    strength = strength_at(waveform, cycle)
    if strength < config.sensor_threshold:
        return SensorReading(cycle, False, Classification.NONE, strength)
    episode = waveform.episodes[waveform.episode_index_at(cycle)]
    return SensorReading(cycle, True, classify_episode(config, episode), strength)


def detection_lead(config: SensorConfig, waveform: AttackWaveform, episode_index: int) -> int:
    """Cycles between the first asserting sample and functional-bit failure.

    When the functional threshold is never reached the end of the episode is
    used instead.  Negative values mean the sensor sampled after the failure.
    """
    if not 0 <= episode_index < len(waveform.episodes):
        raise IndexError(f"no attack episode {episode_index}")
    episode = waveform.episodes[episode_index]
    first = first_asserted_sample(config, episode)
    if first is None:
        return 0
    failing = first_functional_cycle(config, episode)
    return (episode.end_cycle if failing is None else failing) - first


class HazardClock:
    """Cumulative flip hazard H(cycle) = integral of the per-cell flip rate.

    The probability that a cell survives from cycle a to cycle b is
    ``exp(-(H(b) - H(a)))``; this is the exact continuum limit of drawing
    ``flip_probability`` independently every cycle.  Ramps are integrated in
    closed form since the rate is exponential in a linear function of time.
    """

    def __init__(self, params: MtjParams, waveform: AttackWaveform, clock_hz: float):
        self.params = params
        self.waveform = waveform
        self.cycle_time = 1.0 / clock_hz
        self.rate0 = flip_rate(params, 0.0)
        self._starts = [e.start_cycle for e in waveform.episodes]
        self._prefix = []
        total, last_end = 0.0, 0
        for e in waveform.episodes:
            total += self.rate0 * (e.start_cycle - last_end) * self.cycle_time
            self._prefix.append(total)
            total += self._within(e, e.end_cycle)
            last_end = e.end_cycle

    def _within(self, e: AttackEpisode, x: float) -> float:
        a = e.start_cycle
        ct = self.cycle_time
        if e.profile is Profile.STEP or e.peak_strength == 0:
            return flip_rate(self.params, e.strength(a)) * (x - a) * ct
        p = self.params
        kd0 = p.fit_exponent_k * p.nominal_barrier
        span = e.end_cycle - a
        crossing = a + p.critical_strength / e.peak_strength * span
        y = min(x, crossing)
        beta = kd0 * e.peak_strength / (p.critical_strength * span)
        if beta == 0:
            below = self.rate0 * (y - a)
        else:
            z = beta * (y - a)
            grow = math.exp(-kd0) * math.expm1(z) if z < 700 else math.exp(z - kd0)
            below = grow / (beta * p.fit_constant_C)
        above = max(0.0, x - crossing) / p.fit_constant_C
        return (below + above) * ct

    def at(self, cycle: float) -> float:
        i = bisect.bisect_right(self._starts, cycle) - 1
        if i < 0:
            return self.rate0 * cycle * self.cycle_time
        e = self.waveform.episodes[i]
        base = self._prefix[i]
        if cycle < e.end_cycle:
            return base + self._within(e, cycle)
        return base + self._within(e, e.end_cycle) + self.rate0 * (cycle - e.end_cycle) * self.cycle_time


def make_waveform(episodes: Sequence[AttackEpisode]) -> AttackWaveform:
    return AttackWaveform(tuple(sorted(episodes, key=lambda e: e.start_cycle)))
