"""Cache hierarchy simulator for an STTRAM last-level cache under magnetic or
thermal attack, with stall, bypass and checkpoint-based countermeasures."""

from .attack import (AttackEpisode, AttackWaveform, Classification, HazardClock, Profile,
                     SensorConfig, SensorReading, classify_episode, detection_lead,
                     sample_sensor, strength_at)
from .cache import BankedWriteBuffer, CacheGeometry, CacheLevel, WriteBuffer, counter_uniform
from .config import RunConfig, SyntheticTraceSpec, default_config, load_config
from .errors import (ConfigError, DomainError, InvariantViolation, ProtocolError,
                     ReportWriteError, SimulatorError, TraceError)
from .hierarchy import (AccessOutcome, Engine, GoldenMemory, Kind, MemoryRequest, ServicedBy,
                        Trace, parse_trace, read_trace, replay_golden)
from .metrics import EnergyModel, SimReport, emit_report, energy_overhead, normalized_slowdown
from .mitigation import (BypassState, Checkpoint, MitigationController, MitigationPolicy, Phase,
                         PolicyKind, bypass_access)
from .physics import (MtjParams, effective_barrier, flip_probability, retention_time,
                      thermal_barrier)
from .simulator import Simulation, simulate
from .tracegen import gen_trace

__version__ = "0.1.0"
