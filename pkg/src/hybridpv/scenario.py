"""Regulation signals, baseline schedules, reserve policy, thermal baseline unit.

The plant setpoint is a 30-minute block baseline (from the block forecast)
plus a fast regulation signal sampled every 2 s and held between samples.
The reserve target starts at its base value and is relieved one-for-one by
upward regulation.  A ramp-limited reheat thermal unit provides the
comparison baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RegulationSignal:
    """Regulation samples at fixed cadence, active on [activation_s, stop_s)."""

    samples: np.ndarray      # W
    capacity: float          # service size [W]; samples within +/- capacity/2
    activation_s: float = 0.0
    cadence_s: float = 2.0
    stop_s: float = np.inf   # service window end (a PV plant does not bid at night)

    def value_at(self, t: float) -> float:
        if t < self.activation_s or t >= self.stop_s or self.samples.size == 0:
            return 0.0
        k = int((t - self.activation_s) // self.cadence_s)
        k = min(k, self.samples.size - 1)
        return float(self.samples[k])


def zero_regulation(capacity: float = 1e6) -> RegulationSignal:
    return RegulationSignal(samples=np.zeros(1), capacity=capacity)


def synth_regd(duration_s: float, capacity: float, seed,
               cadence_s: float = 2.0, activation_s: float = 0.0,
               stop_s: float = np.inf,
               reversion_tau_s: float = 120.0, sigma_frac: float = 0.18) -> RegulationSignal:
    """Synthetic fast-regulation trace: mean-reverting bounded random walk.

    Stationary first-order autoregression at the sample cadence, clipped to
    +/- capacity/2 and de-meaned so the trace is energy neutral.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(math.ceil(duration_s / cadence_s))
    phi = math.exp(-cadence_s / reversion_tau_s)
    sigma = sigma_frac * capacity
    noise = rng.normal(0.0, sigma * math.sqrt(1.0 - phi * phi), size=n)
    samples = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc = phi * acc + noise[k]
        samples[k] = acc
    lim = 0.5 * capacity
    samples = np.clip(samples, -lim, lim)
    samples = np.clip(samples - samples.mean(), -lim, lim)
    return RegulationSignal(samples=samples, capacity=capacity,
                            activation_s=activation_s, cadence_s=cadence_s,
                            stop_s=stop_s)


@dataclass(frozen=True)
class BaselineSchedule:
    """Piecewise-constant baseline power, one value per scheduling block."""

    block_values: np.ndarray   # W (ac)
    block_s: float = 1800.0

    def value_at(self, t: float) -> float:
        if t < 0 or self.block_values.size == 0:
            return 0.0
        k = min(int(t // self.block_s), self.block_values.size - 1)
        return float(self.block_values[k])

    def values_at(self, times: np.ndarray) -> np.ndarray:
        if self.block_values.size == 0:
            return np.zeros(np.shape(times))
        idx = np.clip((np.asarray(times) // self.block_s).astype(int),
                      0, self.block_values.size - 1)
        out = self.block_values[idx]
        return np.where(np.asarray(times) < 0, 0.0, out)


def setpoint_at(t: float, baseline: BaselineSchedule, reg: RegulationSignal,
                scale: float = 1.0) -> float:
    """Plant power setpoint: scaled block baseline plus held regulation sample."""
    return scale * baseline.value_at(t) + reg.value_at(t)


@dataclass(frozen=True)
class ReservePolicy:
    base: float = 5e5          # reserve target with no upward regulation [W]
    relief_cap: float = 5e5    # upward regulation that cancels the target [W]


def reserve_target(reg_now: float, policy: ReservePolicy = ReservePolicy()) -> float:
    """Reserve floor: base, relieved proportionally by upward regulation.

    Downward regulation gives no relief; the target never leaves [0, base].
    """
    relief = max(0.0, reg_now) * (policy.base / policy.relief_cap)
    return min(max(policy.base - relief, 0.0), policy.base)


@dataclass(frozen=True)
class ThermalUnitParams:
    tau_governor_s: float = 0.2
    tau_turbine_s: float = 0.3
    tau_reheater_s: float = 7.0
    f_hp: float = 0.3
    ramp_per_min: float = 0.8e6   # hard output ramp limit [W/min]
    offset: float = 7.5e5         # setpoint offset so the unit never absorbs [W]


@dataclass(frozen=True)
class ThermalUnitState:
    governor: float = 0.0
    turbine: float = 0.0
    reheater: float = 0.0
    output: float = 0.0


def thermal_unit_initial(p_ref: float, params: ThermalUnitParams = ThermalUnitParams()
                         ) -> ThermalUnitState:
    """Steady state at the offset setpoint (what the unit holds before an event)."""
    target = max(0.0, p_ref + params.offset)
    return ThermalUnitState(governor=target, turbine=target,
                            reheater=target, output=target)


def thermal_step(s: ThermalUnitState, p_ref: float, dt: float,
                 params: ThermalUnitParams = ThermalUnitParams()) -> ThermalUnitState:
    """Advance the thermal unit by dt (<= 1 s) toward regulation request p_ref.

    Governor and turbine lags in cascade, reheater lead-lag, then a hard
    ramp limiter; the output cannot go negative.
    """
    if dt > 1.0:
        raise ValueError("thermal_step needs dt <= 1 s")
    target = max(0.0, p_ref + params.offset)

    def lag(state, drive, tau):
        d = math.exp(-dt / tau)
        return d * state + (1.0 - d) * drive

    governor = lag(s.governor, target, params.tau_governor_s)
    turbine = lag(s.turbine, governor, params.tau_turbine_s)
    reheater = lag(s.reheater, turbine, params.tau_reheater_s)
    staged = params.f_hp * turbine + (1.0 - params.f_hp) * reheater
    max_step = params.ramp_per_min / 60.0 * dt
    output = s.output + min(max(staged - s.output, -max_step), max_step)
    return ThermalUnitState(governor=governor, turbine=turbine,
                            reheater=reheater, output=max(0.0, output))
