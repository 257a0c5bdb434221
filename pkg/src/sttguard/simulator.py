"""Build an engine from a RunConfig and drive one trace through it."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

from .attack import (AttackEpisode, AttackWaveform, HazardClock, Profile, classify_episode,
                     detection_lead, first_asserted_sample, make_waveform, sample_sensor)
from .cache import CacheLevel
from .config import RunConfig
from .hierarchy import Engine, Trace, TraceCursor
from .metrics import SimReport
from .mitigation import MitigationController

# End cycle used for an attack that outlasts the run.
FOREVER = 1 << 62


def _ceil_to(value: int, step: int) -> int:
    return -(-value // step) * step


def duration_episodes(config: RunConfig, trace: Trace) -> List[AttackEpisode]:
    """Turn ``attack.duration_pct`` into a concrete episode starting at cycle 0."""
    pct = config.duration_pct()
    if pct is None:
        return config.attack_episodes()
    if pct <= 0:
        return []
    profile = Profile(config.get("attack.profile"))
    peak = config.get("attack.peak")
    if pct >= 100:
        return [AttackEpisode(0, FOREVER, profile, peak)]
    end = max(1, round(baseline_cycles(config, trace) * pct / 100.0))
    return [AttackEpisode(0, end, profile, peak)]


def baseline_config(config: RunConfig) -> RunConfig:
    return config.with_overrides(**{"attack.duration_pct": -1, "policy": "none", "episodes": []})


# baseline cycle counts keyed by (baseline config hash, trace id)
_BASELINES: Dict[Tuple[str, str], int] = {}


def baseline_cycles(config: RunConfig, trace: Trace) -> int:
    base = baseline_config(config)
    key = (base.config_hash, trace.trace_id)
    if key not in _BASELINES:
        _BASELINES[key] = Simulation(base, trace).run().total_cycles
    return _BASELINES[key]


class Simulation:
    """One deterministic run.  Owns its engine, controller and cursor."""

    def __init__(self, config: RunConfig, trace: Trace,
                 episodes: Optional[Sequence[AttackEpisode]] = None):
        self.config = config
        self.trace = trace
        if episodes is None:
            episodes = duration_episodes(config, trace)
        self.waveform: AttackWaveform = make_waveform(episodes)
        self.sensor = config.sensor()
        self.energy_model = config.energy()
        g = config.get
        llc = CacheLevel("LLC", config.geometry("llc")) if g("llc.enabled") else None
        hazard = None
        if self.waveform.episodes:
            hazard = HazardClock(config.mtj(), self.waveform, g("sim.clock_hz"))
        self.engine = Engine(
            CacheLevel("L1", config.geometry("l1")), CacheLevel("L2", config.geometry("l2")), llc,
            g("mem.latency"), look_through=g("llc.look_through"), hazard=hazard, seed=config.seed,
            wb_banks=g("llc.banks"), wb_entries=g("llc.wb_entries"),
            allow_fills=g("bypass.allow_fills"))
        self.cursor = TraceCursor(trace)
        self.controller = MitigationController(config.mitigation(), self.engine, self.cursor,
                                               self.sensor, self.waveform)
        self.check_every = g("sim.check_every")
        self.controller.verify_commits = self.check_every > 0
        self.ticks = self._event_ticks()
        self._tick = 0
        self.completed = True

    def _event_ticks(self) -> List[int]:
        """Sample instants where the sensor output can change.

        Within one episode the asserted samples form a contiguous run (steps
        are flat, ramps only rise), so only its first asserted sample and the
        first sample at or after its end matter.
        """
        interval = self.sensor.sample_interval
        ticks = set()
        for e in self.waveform.episodes:
            first = first_asserted_sample(self.sensor, e)
            if first is not None:
                ticks.add(first)
                ticks.add(_ceil_to(e.end_cycle, interval))
        return sorted(ticks)

    # -- loop pieces ---------------------------------------------------------
    def process_ticks(self) -> None:
        engine, ticks = self.engine, self.ticks
        while self._tick < len(ticks) and ticks[self._tick] <= engine.cycle:
            reading = sample_sensor(self.sensor, self.waveform, ticks[self._tick])
            self.controller.on_sensor(reading)
            self._tick += 1

    def stall_until(self, cycle: int) -> None:
        if cycle > self.engine.cycle:
            self.engine.charge("stall", cycle - self.engine.cycle)
        self.process_ticks()

    def _wait_out_halt(self) -> bool:
        """Stall through a halted stretch.  False when the halt never ends."""
        while self.engine.halted:
            if self._tick >= len(self.ticks) or self.ticks[self._tick] >= FOREVER:
                return False
            self.stall_until(self.ticks[self._tick])
        return True

    def _gated_checkpoint(self) -> None:
        """Checkpoint now unless the sensor comparator is already tripped.

        A tripped comparator means the next sample will report an attack; the
        core stalls until then so that the epoch is rolled back, not committed.
        """
        controller = self.controller
        interval = self.sensor.sample_interval
        while controller.checkpoint_due():
            if not controller.sensed_now():
                forced = (self.engine.checkpoint_needed
                          and self.engine.cycle < controller.next_checkpoint_cycle)
                controller.take_checkpoint(forced=forced)
                return
            cycle = self.engine.cycle
            self.stall_until(_ceil_to(cycle + 1, interval))

    def run(self) -> SimReport:
        engine, cursor, controller = self.engine, self.cursor, self.controller
        check_every = self.check_every
        since_check = 0
        self.process_ticks()
        while True:
            if engine.halted and not self._wait_out_halt():
                self.completed = False
                break
            if controller.checkpoint_due():
                self._gated_checkpoint()
                if engine.halted:
                    continue
            if cursor.done():
                if controller.checkpointing:
                    # closing commit of the final epoch, gated like any other
                    controller.next_checkpoint_cycle = engine.cycle
                    self._gated_checkpoint()
                    if not cursor.done() or engine.halted:
                        continue
                break
            engine.step(cursor.next())
            if check_every:
                since_check += 1
                if since_check >= check_every:
                    since_check = 0
                    engine.check_exclusivity()
            self.process_ticks()
        engine.corrupted_reads += engine.corrupt_pending
        engine.corrupt_pending = 0
        if check_every:
            engine.check_exclusivity()
        return self.report()

    # -- results -------------------------------------------------------------
    def report(self) -> SimReport:
        engine, model = self.engine, self.energy_model
        vector = model.vector()
        events = dict(self.controller.events)
        report = SimReport(
            config_hash=self.config.config_hash,
            trace_id=self.trace.trace_id,
            seed=self.config.seed,
            policy=self.config.policy_kind.value,
            attack=self.attack_summary(),
            total_cycles=engine.cycle,
            cycles=dict(engine.cycles),
            requests_executed=engine.requests_executed,
            useful_requests=len(self.trace),
            levels=dict(engine.levels),
            events=events,
            energy_events=dict(engine.energy),
            energy_by_component=model.breakdown(engine.energy),
            energy_total=sum(engine.energy[k] * v for k, v in vector.items()),
            corrupted_reads=engine.corrupted_reads,
            squashed_corrupt_reads=engine.squashed_corrupt_reads,
            restart_required=self.controller.restart_required,
            completed=self.completed,
            config=self.config.as_dict(),
        )
        report.check_identities(model)
        return report

    def attack_summary(self) -> dict:
        episodes = self.waveform.episodes
        return {
            "episodes": [e.format() for e in episodes],
            "duration_pct": self.config.duration_pct(),
            "classification": [classify_episode(self.sensor, e).value for e in episodes],
            "detection_lead": [detection_lead(self.sensor, self.waveform, i)
                               for i in range(len(episodes))],
        }


def simulate(config: RunConfig, trace: Trace,
             episodes: Optional[Sequence[AttackEpisode]] = None) -> SimReport:
    return Simulation(config, trace, episodes).run()

