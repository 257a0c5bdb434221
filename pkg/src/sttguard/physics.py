"""MTJ retention physics and the attack-strength to flip-probability mapping.

Retention follows the usual Arrhenius-style fit ``t = C * exp(k * delta)`` with
``delta = E / (kB * T)``.  An external field or heat source is modelled as a
linear erosion of the barrier, reaching zero at ``critical_strength``.  Flips
are memoryless, so the probability that a cell flips within ``dt`` seconds is
``1 - exp(-dt / t_ret)``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

from .errors import DomainError

BOLTZMANN = 1.380649e-23  # J/K, exact SI value

# Largest k*delta for which exp() stays finite in double precision.
_EXP_LIMIT = math.log(sys.float_info.max)


@dataclass(frozen=True)
class MtjParams:
    fit_constant_C: float = 1e-9
    fit_exponent_k: float = 1.0
    energy_barrier_E: float = 60.0 * BOLTZMANN * 300.0
    boltzmann_kB: float = BOLTZMANN
    nominal_temperature_T: float = 300.0
    critical_strength: float = 2.0

    def __post_init__(self):
        for name in ("fit_constant_C", "energy_barrier_E", "boltzmann_kB",
                     "nominal_temperature_T", "critical_strength"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
        # k = 0 is accepted: it is the degenerate "retention independent of barrier" case.
        if not (self.fit_exponent_k >= 0 and math.isfinite(self.fit_exponent_k)):
            raise DomainError(f"fit_exponent_k must be non-negative, got {self.fit_exponent_k!r}")

    @property
    def nominal_barrier(self) -> float:
        return thermal_barrier(self, self.nominal_temperature_T)


def thermal_barrier(params: MtjParams, temperature: float) -> float:
    """Return the dimensionless barrier E / (kB * T) at ``temperature`` kelvin."""
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature!r}")
    return params.energy_barrier_E / (params.boltzmann_kB * temperature)


def retention_time(params: MtjParams, barrier: float) -> float:
    """Mean time to a thermal flip, in seconds, for a cell with ``barrier``.

    Saturates at the largest finite double instead of overflowing.
    """
    if barrier < 0 or math.isnan(barrier):
        raise DomainError(f"barrier must be non-negative, got {barrier!r}")
    exponent = params.fit_exponent_k * barrier
    if exponent + math.log(params.fit_constant_C) >= _EXP_LIMIT:
        return sys.float_info.max
    return params.fit_constant_C * math.exp(exponent)


def effective_barrier(params: MtjParams, strength: float) -> float:
    if strength < 0 or math.isnan(strength):
        raise DomainError(f"attack strength must be non-negative, got {strength!r}")
    return params.nominal_barrier * max(0.0, 1.0 - strength / params.critical_strength)


def flip_rate(params: MtjParams, strength: float) -> float:
    """Instantaneous per-cell flip hazard (1/s) under ``strength``."""
    return 1.0 / retention_time(params, effective_barrier(params, strength))


def flip_probability(params: MtjParams, strength: float, dt: float) -> float:
    """Probability that a cell flips at least once during ``dt`` seconds."""
    if dt < 0 or math.isnan(dt):
        raise DomainError(f"dt must be non-negative, got {dt!r}")
    t_ret = retention_time(params, effective_barrier(params, strength))
    return -math.expm1(-dt / t_ret)
