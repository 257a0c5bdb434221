import re

import pytest

from conftest import random_trace, small_config, trace_of
from sttguard.attack import AttackEpisode, Classification, SensorReading
from sttguard.errors import ProtocolError
from sttguard.hierarchy import Kind, MemoryRequest, ServicedBy, replay_golden
from sttguard.mitigation import BypassState, Phase, bypass_access
from sttguard.simulator import Simulation, simulate

A = 0x5000_0000


def reading(cycle, asserted, cls=Classification.GRADUAL):
    return SensorReading(cycle, asserted, cls if asserted else Classification.NONE, 1.5 if asserted else 0)


def sim(policy="bypass", trace=None, episodes=(), **kw):
    cfg = small_config(policy=policy, **kw)
    return Simulation(cfg, trace if trace is not None else trace_of(), list(episodes))


def test_bypass_state_machine():
    st = BypassState()
    assert not st.bp_signal
    for phase, signal in [(Phase.PREPARING, False), (Phase.ACTIVE, True),
                          (Phase.EXITING, True), (Phase.OFF, False)]:
        st.advance(phase)
        assert st.bp_signal is signal
    with pytest.raises(ProtocolError):
        st.advance(Phase.ACTIVE)


def test_on_sensor_bypass_sequence():
    s = sim("bypass")
    ctl = s.controller
    assert ctl.on_sensor(reading(100, True)) == ["flush", "bp_up"]
    assert ctl.bypass.phase is Phase.ACTIVE and s.engine.bypass_hook is not None
    assert ctl.on_sensor(reading(200, True)) == []
    assert ctl.on_sensor(reading(300, False)) == ["invalidate", "bp_down"]
    assert ctl.bypass.phase is Phase.OFF and s.engine.bypass_hook is None
    with pytest.raises(ProtocolError):
        ctl.on_sensor(reading(300, True))


def test_on_sensor_checkpoint_bypass_sudden():
    s = sim("checkpoint_bypass")
    ctl = s.controller
    actions = ctl.on_sensor(reading(100, True, Classification.SUDDEN))
    assert actions == ["rollback", "bp_up"]
    assert not ctl.checkpointing and ctl.bypass.bp_signal
    assert ctl.on_sensor(reading(500, False)) == ["invalidate", "bp_down", "checkpoint"]
    assert ctl.checkpointing


def test_stall_policy_actions():
    s = sim("stall")
    ctl = s.controller
    assert ctl.on_sensor(reading(100, True)) == ["flush", "halt"]
    assert s.engine.halted
    assert ctl.on_sensor(reading(200, False)) == ["invalidate", "resume"]
    assert not s.engine.halted
    assert ctl.on_sensor(reading(300, True, Classification.SUDDEN)) == ["restart_required", "halt"]
    assert ctl.restart_required


def test_bypass_access_paths():
    s = sim("bypass")
    e = s.engine
    e.llc.insert(A, 0, False)
    before = e.llc.lookup(A)
    with pytest.raises(ProtocolError):
        bypass_access(e, MemoryRequest(0, Kind.READ, A), s.controller.bypass)
    s.controller.on_sensor(reading(100, True))
    # resident clean LLC line: memory serves it, LLC copy untouched
    e.llc.insert(A, 0, False)
    out = e.step(MemoryRequest(0, Kind.READ, A))
    assert out.serviced_by is ServicedBy.MEMORY
    line = e.llc.lookup(A)
    assert line is not None and line.version == 0 and not line.poisoned
    # write hit on the LLC: LLC unchanged (marked stale), oracle and memory updated
    B = A + 0x40_000
    e.llc.insert(B, 0, False)
    e.step(MemoryRequest(1, Kind.WRITE, B))
    line = e.llc.lookup(B)
    assert line.version == 0 and line.poisoned
    assert e.golden.expected(B) == 1
    assert e.memory_read(B) == 1
    # never-cached address costs exactly a normal LLC miss
    out = e.step(MemoryRequest(2, Kind.READ, A + 0x80_000))
    plain = sim("none").engine.step(MemoryRequest(0, Kind.READ, A + 0x80_000))
    assert out.latency == plain.latency
    assert before is not None


def test_checkpoint_examples():
    trace = random_trace(3, 300, 40, 0.5)
    s = sim("checkpoint_bypass", trace, **{"checkpoint.interval": "inf"})
    ctl = s.controller
    cp = ctl.take_checkpoint()
    assert s.engine.cycles["checkpoint"] == 100 and cp.trace_index == 0
    for _ in range(150):
        s.engine.step(s.cursor.next())
    cp = ctl.take_checkpoint()
    assert cp.golden_snapshot == replay_golden(trace[:150])
    assert s.engine.memory == {k: v for k, v in cp.golden_snapshot.versions.items()}
    assert all(not l.dirty and not l.volatile_flag
               for lvl in s.engine.levels_present() for l in lvl.lines())


def test_forced_checkpoint_on_full_buffer():
    trace = random_trace(4, 3000, 2000, 0.6)
    s = sim("checkpoint_bypass", trace, **{"checkpoint.interval": "inf", "sim.check_every": 50})
    report = s.run()
    assert report.events["forced_checkpoints"] > 0
    assert report.corrupted_reads == 0 and report.requests_executed == 3000
    assert s.engine.golden == replay_golden(trace)


def test_rollback_examples():
    trace = random_trace(5, 2000, 100)
    s = sim("checkpoint_bypass", trace, **{"checkpoint.interval": "inf"})
    ctl = s.controller
    cp = ctl.take_checkpoint()
    assert ctl.rollback(cp) == 0
    for _ in range(1000):
        s.engine.step(s.cursor.next())
    cp = ctl.take_checkpoint()
    for _ in range(500):
        s.engine.step(s.cursor.next())
    assert ctl.rollback(cp) == 500
    assert s.cursor.position == 1000
    assert s.engine.golden == replay_golden(trace[:1000])
    assert all(len(lvl) == 0 for lvl in s.engine.levels_present())
    ctl.bypass.advance(Phase.PREPARING)
    with pytest.raises(ProtocolError):
        ctl.rollback(cp)


def test_rollback_then_clean_continuation():
    trace = random_trace(6, 3000, 300, 0.4)
    attack = [AttackEpisode(20_000, 1 << 40, "step", 3.0)]
    report = simulate(small_config(policy="checkpoint_bypass"), trace, attack)
    assert report.events["rollbacks"] == 1 and report.corrupted_reads == 0
    assert report.requests_executed == 3000 + report.events["re_executed_requests"]


def action_string(actions):
    return " ".join(a for _, a in actions)


def test_fsm_action_order_per_episode():
    trace = random_trace(7, 4000, 400, 0.3)
    eps = [AttackEpisode(10_000, 30_000, "ramp", 3.0), AttackEpisode(60_000, 90_000, "step", 1.2)]
    s = Simulation(small_config(policy="bypass"), trace, eps)
    s.run()
    text = action_string(s.controller.actions)
    assert re.fullmatch(r"(?:(?:flush )*bp_up invalidate bp_down ?)+", text + " "), text
    assert text.count("bp_up") == 2


def test_stall_closed_form_and_additivity():
    trace = random_trace(8, 3000, 200, 0.3)
    cfg = small_config(policy="stall", **{"llc.enabled": "false"})
    base = simulate(cfg, trace, [])
    one = Simulation(cfg, trace, [AttackEpisode(20_000, 50_000, "step", 1.5)])
    r1 = one.run()
    halt_at = next(c for c, a in one.controller.actions if a == "halt")
    assert r1.total_cycles == base.total_cycles + (50_000 - halt_at) + 10
    assert abs(r1.total_cycles - base.total_cycles - 30_000 - 10) < 110
    two = Simulation(cfg, trace, [AttackEpisode(20_000, 50_000, "step", 1.5),
                                  AttackEpisode(80_000, 90_000, "step", 1.5)])
    r2 = two.run()
    halts = [c for c, a in two.controller.actions if a == "halt"]
    added = (50_000 - halts[0]) + (90_000 - halts[1]) + 2 * 10
    assert r2.total_cycles == base.total_cycles + added
    assert r2.cycles["stall"] == added - 20


def test_stall_with_undetectable_attack_equals_baseline():
    trace = random_trace(9, 1000, 200)
    cfg = small_config(policy="stall")
    base = simulate(cfg, trace, [])
    weak = simulate(cfg, trace, [AttackEpisode(1000, 20_000, "step", 0.5)])
    assert weak.total_cycles == base.total_cycles
    zero = simulate(cfg.with_overrides(**{"attack.duration_pct": 0}), trace)
    assert zero.total_cycles == base.total_cycles


def test_commit_modes_give_identical_snapshots():
    trace = random_trace(10, 3000, 500, 0.5)
    snaps = {}
    for mode in ("masked_buffer", "volatile_bit"):
        s = sim("checkpoint_bypass", trace, **{"checkpoint.commit": mode, "checkpoint.interval": 5000})
        s.run()
        snaps[mode] = ([(c.trace_index, c.golden_snapshot.versions) for c in s.controller.checkpoint_log],
                       s.engine.memory)
    assert snaps["masked_buffer"] == snaps["volatile_bit"]


def test_memory_only_changes_at_checkpoints():
    trace = random_trace(11, 3000, 500, 0.5)
    s = sim("checkpoint_bypass", trace, **{"checkpoint.interval": 5000})
    inside = {"on": False}
    take, commit = s.controller.take_checkpoint, s.engine.commit

    def wrapped_take(*a, **k):
        inside["on"] = True
        try:
            return take(*a, **k)
        finally:
            inside["on"] = False

    def wrapped_commit(entry):
        assert inside["on"], "memory written outside a checkpoint"
        commit(entry)

    s.controller.take_checkpoint = wrapped_take
    s.engine.commit = wrapped_commit
    report = s.run()
    assert report.events["checkpoints"] > 1


def test_sudden_attack_under_plain_bypass_is_reported_honestly():
    trace = random_trace(12, 6000, 300, 0.5)
    attack = [AttackEpisode(60_050, 1 << 40, "step", 3.0)]
    plain = simulate(small_config(policy="bypass"), trace, attack)
    guarded = simulate(small_config(policy="checkpoint_bypass"), trace, attack)
    assert plain.corrupted_reads > 0
    assert guarded.corrupted_reads == 0


def test_adaptive_interval_halves_after_first_detection():
    trace = random_trace(13, 3000, 300)
    s = sim("checkpoint_bypass", trace, episodes=[AttackEpisode(10_000, 20_000, "step", 1.5)],
            **{"checkpoint.adaptive": "true", "checkpoint.interval": 8000})
    s.run()
    assert s.controller.interval == 4000
