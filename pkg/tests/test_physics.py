import math
import sys

import mpmath
import numpy as np
import pytest

from sttguard.errors import DomainError
from sttguard.physics import (BOLTZMANN, MtjParams, effective_barrier, flip_probability,
                              flip_rate, retention_time, thermal_barrier)

mpmath.mp.dps = 50


def rel_err(got, want):
    return abs(mpmath.mpf(got) - want) / abs(want)


def test_nominal_barrier_is_sixty():
    assert thermal_barrier(MtjParams(), 300.0) == pytest.approx(60.0, rel=1e-15)


def test_barrier_halves_when_temperature_doubles():
    p = MtjParams()
    assert thermal_barrier(p, 600.0) == pytest.approx(thermal_barrier(p, 300.0) / 2, rel=1e-15)


@pytest.mark.parametrize("E,T", [(2.48e-20, 300.0), (1e-19, 350.0), (3.3e-21, 77.0), (5e-19, 1200.0)])
def test_barrier_against_mpmath(E, T):
    p = MtjParams(energy_barrier_E=E)
    want = mpmath.mpf(E) / (mpmath.mpf(BOLTZMANN) * mpmath.mpf(T))
    assert rel_err(thermal_barrier(p, T), want) <= 1e-12


def test_barrier_example_value():
    assert thermal_barrier(MtjParams(energy_barrier_E=2.48e-20), 300.0) == pytest.approx(5.987, abs=1e-3)


@pytest.mark.parametrize("T", [0.0, -1.0])
def test_barrier_rejects_nonpositive_temperature(T):
    with pytest.raises(DomainError):
        thermal_barrier(MtjParams(), T)


@pytest.mark.parametrize("C,k,barrier", [(1.0, 1.0, 40.0), (1e-9, 1.0, 60.0), (2.5e-10, 0.7, 13.3),
                                         (1e-9, 1.3, 100.0), (3e-8, 2.0, 0.5)])
def test_retention_against_mpmath(C, k, barrier):
    p = MtjParams(fit_constant_C=C, fit_exponent_k=k)
    want = mpmath.mpf(C) * mpmath.exp(mpmath.mpf(k) * mpmath.mpf(barrier))
    assert rel_err(retention_time(p, barrier), want) <= 1e-12


def test_retention_examples():
    assert retention_time(MtjParams(fit_constant_C=1.0), 40.0) == pytest.approx(2.3538e17, rel=1e-4)
    assert retention_time(MtjParams(), 0.0) == 1e-9
    assert retention_time(MtjParams(fit_exponent_k=0.0), 123.0) == 1e-9


def test_retention_saturates_instead_of_overflowing():
    assert retention_time(MtjParams(fit_constant_C=1.0), 1e6) == sys.float_info.max


def test_retention_rejects_negative_barrier():
    with pytest.raises(DomainError):
        retention_time(MtjParams(), -0.1)


def test_effective_barrier_examples():
    p = MtjParams()
    d0 = p.nominal_barrier
    assert effective_barrier(p, 0.0) == d0
    assert effective_barrier(p, p.critical_strength) == 0.0
    assert effective_barrier(p, p.critical_strength / 2) == pytest.approx(d0 / 2)
    assert effective_barrier(p, 10.0) == 0.0
    with pytest.raises(DomainError):
        effective_barrier(p, -1.0)


def test_flip_probability_examples():
    p = MtjParams()
    assert flip_probability(p, 1.0, 0.0) == 0.0
    assert flip_probability(p, 2.0, 10 * p.fit_constant_C) == pytest.approx(0.9999546, abs=1e-7)
    assert flip_probability(p, 5.0, 10 * p.fit_constant_C) == pytest.approx(1 - math.exp(-10), rel=1e-14)
    with pytest.raises(DomainError):
        flip_probability(p, 1.0, -1.0)


def test_flip_probability_tiny_values_keep_precision():
    p = MtjParams()
    got = flip_probability(p, 0.0, 1e-9)
    want = -mpmath.expm1(-mpmath.mpf(1e-9) / (mpmath.mpf(1e-9) * mpmath.exp(60)))
    assert rel_err(got, want) <= 1e-12


def test_params_validation():
    with pytest.raises(DomainError):
        MtjParams(fit_constant_C=0.0)
    with pytest.raises(DomainError):
        MtjParams(fit_exponent_k=-1.0)
    with pytest.raises(DomainError):
        MtjParams(critical_strength=float("inf"))


# (strength, dt in cycles of 0.5 ns, cycles) chosen so the per-run flip probability is moderate
MC_POINTS = [(2.0, 1, 3), (2.5, 1, 1), (1.9, 1, 30), (1.8, 1, 200), (1.7, 1, 2000),
             (1.95, 1, 5), (1.85, 1, 60), (1.75, 1, 500), (1.6, 1, 30000), (3.0, 1, 2)]


@pytest.mark.parametrize("strength,step,cycles", MC_POINTS)
def test_monte_carlo_flip_fraction(strength, step, cycles):
    """Per-cycle Bernoulli draws reproduce the closed form within 3 sigma."""
    p = MtjParams()
    dt = 0.5e-9 * step
    per_cycle = flip_probability(p, strength, dt)
    rng = np.random.default_rng(int(strength * 1000) + cycles)
    n = 4000
    # a cell survives only if every cycle's draw misses
    draws = rng.random((n, cycles)) < per_cycle
    frac = draws.any(axis=1).mean()
    want = 1 - math.exp(-cycles * dt / retention_time(p, effective_barrier(p, strength)))
    sigma = math.sqrt(want * (1 - want) / n)
    assert abs(frac - want) <= 3 * sigma + 1e-12, (frac, want, sigma)


def test_flip_rate_is_inverse_retention():
    p = MtjParams()
    assert flip_rate(p, 1.0) == 1.0 / retention_time(p, 30.0)
