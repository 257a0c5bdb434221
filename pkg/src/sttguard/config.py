"""Flat ``section.key = value`` run configuration.

Every key has a declared type and default; unknown keys are rejected so a
typo never silently falls back to a default.  Environment variables named
``STTSIM_<SECTION>__<KEY>`` (case-insensitive) override file values, e.g.
``STTSIM_LLC__READ_LATENCY=20`` or ``STTSIM_POLICY=bypass``.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from .attack import AttackEpisode, SensorConfig
from .cache import CacheGeometry
from .errors import ConfigError
from .metrics import EnergyModel
from .mitigation import CommitMode, MitigationPolicy, PolicyKind
from .physics import BOLTZMANN, MtjParams

ENV_PREFIX = "STTSIM_"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    text = text.strip().replace("_", "")
    return int(text, 0)


def _float(text: str) -> float:
    value = float(text.strip().replace("_", ""))
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return value
    return parse


def _text(text: str) -> str:
    return text.strip()


# key -> (parser, default as text)
SCHEMA: Dict[str, Tuple[Callable[[str], object], str]] = {
    "sim.seed": (_int, "0"),
    "sim.clock_hz": (_float, "2e9"),
    "sim.check_every": (_int, "0"),

    "l1.capacity": (_int, "16384"),
    "l1.ways": (_int, "4"),
    "l1.line_size": (_int, "64"),
    "l1.read_latency": (_int, "2"),
    "l1.write_latency": (_int, "2"),

    "l2.capacity": (_int, "262144"),
    "l2.ways": (_int, "8"),
    "l2.read_latency": (_int, "8"),
    "l2.write_latency": (_int, "8"),

    "llc.enabled": (_bool, "true"),
    "llc.capacity": (_int, "8388608"),
    "llc.ways": (_int, "8"),
    "llc.read_latency": (_int, "17"),
    "llc.write_latency": (_int, "34"),
    "llc.banks": (_int, "4"),
    "llc.wb_entries": (_int, "8"),
    "llc.look_through": (_bool, "false"),

    "mem.latency": (_int, "100"),

    "mtj.fit_constant_c": (_float, "1e-9"),
    "mtj.fit_exponent_k": (_float, "1.0"),
    "mtj.energy_barrier": (_float, repr(60.0 * BOLTZMANN * 300.0)),
    "mtj.temperature": (_float, "300.0"),
    "mtj.critical_strength": (_float, "2.0"),

    "sensor.threshold": (_float, "1.0"),
    "sensor.sample_interval": (_int, "100"),
    "sensor.lead_cycles": (_int, "200000"),

    # attack.episode is repeatable; attack.duration_pct is the sweep-style shorthand
    "attack.episode": (_text, ""),
    "attack.duration_pct": (_float, "-1"),
    "attack.profile": (_choice("step", "ramp"), "step"),
    "attack.peak": (_float, "1.5"),

    "policy": (_choice(*(p.value for p in PolicyKind)), "none"),
    "checkpoint.interval": (_float, "100000"),
    "checkpoint.adaptive": (_bool, "false"),
    "checkpoint.register_save_cost": (_int, "100"),
    "checkpoint.rollback_cost": (_int, "100"),
    "checkpoint.commit": (_choice(*(m.value for m in CommitMode)), "masked_buffer"),
    "bypass.allow_fills": (_bool, "false"),
    "mitigation.invalidate_cost": (_int, "10"),

    "energy.l1_access": (_float, "1"),
    "energy.l2_access": (_float, "2"),
    "energy.llc_read": (_float, "3"),
    "energy.llc_write": (_float, "8"),
    "energy.mem_access": (_float, "20"),
    "energy.buffer_op": (_float, "1"),
    "energy.checkpoint_overhead": (_float, "50"),

    "trace.file": (_text, ""),
    "trace.length": (_int, "100000"),
    "trace.working_set": (_int, "4194304"),
    "trace.locality_alpha": (_float, "0.8"),
    "trace.write_fraction": (_float, "0.3"),
    "trace.stride_mix": (_float, "0.2"),

    "sweep.durations": (_text, "0,25,50,75,100"),
    "sweep.policies": (_text, "none,stall,bypass,checkpoint_bypass"),
    "sweep.intervals": (_text, "25000,50000,100000,200000"),
}

REPEATABLE = {"attack.episode"}


@dataclass(frozen=True)
class SyntheticTraceSpec:
    length: int = 100_000
    working_set: int = 1 << 20
    locality_alpha: float = 1.0
    write_fraction: float = 0.3
    stride_mix: float = 0.2
    line_size: int = 64

    def __post_init__(self):
        if self.length < 0:
            raise ConfigError("trace.length must be >= 0")
        if self.working_set < self.line_size:
            raise ConfigError("trace.working_set must hold at least one line")
        if not 0.0 <= self.write_fraction <= 1.0:
            raise ConfigError("trace.write_fraction must be in [0, 1]")
        if not 0.0 <= self.stride_mix <= 1.0:
            raise ConfigError("trace.stride_mix must be in [0, 1]")
        if self.locality_alpha < 0:
            raise ConfigError("trace.locality_alpha must be >= 0")


@dataclass
class RunConfig:
    """Resolved configuration.  ``values`` holds every key as canonical text."""

    values: Dict[str, str] = field(default_factory=dict)
    episodes: Tuple[str, ...] = ()

    # -- construction ----------------------------------------------------
    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object], episodes=()) -> "RunConfig":
        raw: Dict[str, str] = {}
        eps = list(episodes)
        for key, value in mapping.items():
            key = key.strip().lower()
            if key in REPEATABLE:
                if isinstance(value, (list, tuple)):
                    eps.extend(str(v) for v in value)
                elif str(value).strip():
                    eps.extend(v for v in str(value).split(";") if v.strip())
                continue
            raw[key] = str(value)
        return cls._resolve(raw, eps)

    @classmethod
    def _resolve(cls, raw: Dict[str, str], episodes: List[str]) -> "RunConfig":
        values = {}
        for key in raw:
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
        for key, (parse, default) in SCHEMA.items():
            if key in REPEATABLE:
                continue
            text = raw.get(key, default)
            try:
                parsed = parse(text)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            values[key] = _canonical(parsed)
        parsed_eps = tuple(AttackEpisode.parse(e).format() for e in episodes)
        config = cls(values, parsed_eps)
        config.validate()
        return config

    def with_overrides(self, **updates) -> "RunConfig":
        """Copy with keys replaced; use ``episodes=[...]`` to replace the attack."""
        episodes = updates.pop("episodes", self.episodes)
        merged = dict(self.values)
        for key, value in updates.items():
            merged[key.replace("__", ".")] = str(value)
        return RunConfig.from_mapping(merged, episodes)

    # -- typed accessors ---------------------------------------------------
    def get(self, key: str):
        parse, _ = SCHEMA[key]
        return parse(self.values[key])

    def __getitem__(self, key: str):
        return self.get(key)

    @property
    def seed(self) -> int:
        return self.get("sim.seed")

    @property
    def policy_kind(self) -> PolicyKind:
        return PolicyKind(self.get("policy"))

    def geometry(self, level: str) -> CacheGeometry:
        g = self.get
        line = g("l1.line_size")
        if level == "llc":
            return CacheGeometry(g("llc.capacity"), g("llc.ways"), line, g("llc.read_latency"),
                                 g("llc.write_latency"), g("llc.banks"), g("llc.wb_entries"))
        return CacheGeometry(g(f"{level}.capacity"), g(f"{level}.ways"), line,
                             g(f"{level}.read_latency"), g(f"{level}.write_latency"))

    def mtj(self) -> MtjParams:
        g = self.get
        return MtjParams(fit_constant_C=g("mtj.fit_constant_c"), fit_exponent_k=g("mtj.fit_exponent_k"),
                         energy_barrier_E=g("mtj.energy_barrier"),
                         nominal_temperature_T=g("mtj.temperature"),
                         critical_strength=g("mtj.critical_strength"))

    def sensor(self) -> SensorConfig:
        g = self.get
        return SensorConfig(g("sensor.threshold"), g("mtj.critical_strength"),
                            g("sensor.sample_interval"), g("sensor.lead_cycles"))

    def mitigation(self) -> MitigationPolicy:
        g = self.get
        return MitigationPolicy(self.policy_kind, g("checkpoint.interval"), g("checkpoint.adaptive"),
                                g("checkpoint.register_save_cost"), g("checkpoint.rollback_cost"),
                                g("mitigation.invalidate_cost"), g("checkpoint.commit"))

    def energy(self) -> EnergyModel:
        return EnergyModel(**{k.split(".", 1)[1]: self.get(k) for k in SCHEMA if k.startswith("energy.")})

    def trace_spec(self) -> SyntheticTraceSpec:
        g = self.get
        return SyntheticTraceSpec(g("trace.length"), g("trace.working_set"), g("trace.locality_alpha"),
                                  g("trace.write_fraction"), g("trace.stride_mix"), g("l1.line_size"))

    def attack_episodes(self) -> List[AttackEpisode]:
        return [AttackEpisode.parse(e) for e in self.episodes]

    def duration_pct(self) -> Optional[float]:
        pct = self.get("attack.duration_pct")
        return None if pct < 0 else pct

    def validate(self) -> None:
        """Build every typed piece once so bad values fail at load time."""
        self.geometry("l1")
        self.geometry("l2")
        if self.get("llc.enabled"):
            self.geometry("llc")
        self.mtj()
        self.sensor()
        self.mitigation()
        self.energy()
        self.trace_spec()
        if self.get("mem.latency") < 0:
            raise ConfigError("mem.latency must be >= 0")
        if self.get("sim.clock_hz") <= 0:
            raise ConfigError("sim.clock_hz must be positive")
        if self.get("sim.check_every") < 0:
            raise ConfigError("sim.check_every must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("sim.seed must fit in 64 unsigned bits")
        pct = self.duration_pct()
        if pct is not None and pct > 100:
            raise ConfigError("attack.duration_pct must be within [0, 100]")
        if pct is not None and self.episodes:
            raise ConfigError("give either attack.episode or attack.duration_pct, not both")
        eps = sorted(self.attack_episodes(), key=lambda e: e.start_cycle)
        for a, b in zip(eps, eps[1:]):
            if b.start_cycle < a.end_cycle:
                raise ConfigError("attack episodes overlap")

    # -- serialization -----------------------------------------------------
    def lines(self) -> List[str]:
        out = [f"{k} = {v}" for k, v in sorted(self.values.items())]
        out.extend(f"attack.episode = {e}" for e in self.episodes)
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def as_dict(self) -> Dict[str, str]:
        out = dict(sorted(self.values.items()))
        out["attack.episode"] = ";".join(self.episodes)
        return out

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _canonical(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    raw: Dict[str, str] = {}
    episodes: List[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        key = key.lower()
        if key in REPEATABLE:
            episodes.append(value)
            continue
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    apply_env(raw, episodes, os.environ if env is None else env)
    return RunConfig._resolve(raw, episodes)


def apply_env(raw: Dict[str, str], episodes: List[str], env: Mapping[str, str]) -> None:
    for name, value in sorted(env.items()):
        if not name.upper().startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if key in REPEATABLE:
            episodes[:] = [v for v in value.split(";") if v.strip()]
        else:
            raw[key] = value


def load_config(path=None, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    if path is None:
        return parse_config_text("", env)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, env)


def default_config(**overrides) -> RunConfig:
    """Defaults with no environment applied; handy in tests and notebooks."""
    return RunConfig.from_mapping({k.replace("__", "."): v for k, v in overrides.items()})


def parse_float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]

