"""Second-order RC equivalent-circuit lithium-ion battery.

Cell-level parameters scale to the pack by the series/parallel counts;
the open-circuit voltage is a seventh-order polynomial in SOC.  State
stepping uses the exact zero-order-hold solution of each RC branch, so a
step of dt equals two steps of dt/2 for constant current.

Sign convention: positive battery current discharges the pack.
Parameters are treated as constant, which is only valid while the SOC
stays inside the pack's validity window (20..100%).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Open-circuit voltage polynomial, volts per cell, highest degree first
# (degree 7 .. constant).
OCV_COEFFS_CELL = (8.4073, -19.892, 11.497, 4.161, -4.5533, 0.34365, 0.64685, 3.5016)


@dataclass(frozen=True)
class CellParams:
    """Per-cell equivalent-circuit parameters.

    r_s          series resistance [ohm]
    r_ts, c_ts   short-term RC branch [ohm, F]
    r_tl, c_tl   long-term RC branch [ohm, F]
    q_ah         capacity [Ah]
    ocv_coeffs   open-circuit voltage polynomial [V], degree 7 first
    """

    r_s: float
    r_ts: float
    c_ts: float
    r_tl: float
    c_tl: float
    q_ah: float
    ocv_coeffs: tuple = OCV_COEFFS_CELL

    def __post_init__(self):
        if min(self.r_s, self.r_ts, self.c_ts, self.r_tl, self.c_tl, self.q_ah) <= 0:
            raise ValueError("all cell parameters must be positive")
        if not self.tau_ts < self.tau_tl:
            raise ValueError("short-term time constant must be below the long-term one")

    @property
    def tau_ts(self) -> float:
        return self.r_ts * self.c_ts

    @property
    def tau_tl(self) -> float:
        return self.r_tl * self.c_tl


@dataclass(frozen=True)
class PackParams:
    """Pack-level parameters (same field roles as CellParams)."""

    r_s: float
    r_ts: float
    c_ts: float
    r_tl: float
    c_tl: float
    q_ah: float
    ocv_coeffs: tuple
    n_series: int
    n_parallel: int
    p_nominal: float                 # nominal battery power [W]
    soc_window: tuple = (0.20, 1.0)  # SOC validity window of the RC model

    def __post_init__(self):
        if self.soc_window[0] < 0.20:
            raise ValueError("model parameters are not valid below 20% SOC")

    @property
    def tau_ts(self) -> float:
        return self.r_ts * self.c_ts

    @property
    def tau_tl(self) -> float:
        return self.r_tl * self.c_tl

    @property
    def q_coulomb(self) -> float:
        return 3600.0 * self.q_ah


@dataclass(frozen=True)
class BatteryState:
    soc: float     # fraction of capacity remaining
    v_cts: float   # short-term branch voltage, pack level [V]
    v_ctl: float   # long-term branch voltage, pack level [V]


# Table I battery: 441s x 9p, 160 Ah at pack level, 1 MW nominal.
TABLE_CELL = CellParams(r_s=1.3e-3, r_ts=2e-3, c_ts=440.57,
                        r_tl=4.2e-3, c_tl=17111.0, q_ah=160.0 / 9.0)


def pack_from_cell(cell: CellParams, n_series: int, n_parallel: int,
                   p_nominal: float, soc_window: tuple = (0.20, 1.0)) -> PackParams:
    """Scale cell parameters to an n_series x n_parallel pack.

    Resistances scale by ns/np, capacitances by np/ns (time constants are
    preserved), capacity by np, and the OCV polynomial by ns.
    """
    if n_series < 1 or n_parallel < 1:
        raise ValueError("counts must be >= 1")
    k = n_series / n_parallel
    return PackParams(
        r_s=cell.r_s * k, r_ts=cell.r_ts * k, c_ts=cell.c_ts / k,
        r_tl=cell.r_tl * k, c_tl=cell.c_tl / k,
        q_ah=cell.q_ah * n_parallel,
        ocv_coeffs=tuple(c * n_series for c in cell.ocv_coeffs),
        n_series=n_series, n_parallel=n_parallel,
        p_nominal=p_nominal, soc_window=soc_window,
    )


def default_pack() -> PackParams:
    return pack_from_cell(TABLE_CELL, 441, 9, p_nominal=1e6)


def ocv(soc: float, coeffs=OCV_COEFFS_CELL) -> float:
    """Open-circuit voltage at the given SOC (Horner evaluation)."""
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"SOC {soc} outside [0, 1]")
    return float(np.polyval(coeffs, soc))


def ocv_derivative(soc: float, coeffs=OCV_COEFFS_CELL) -> float:
    """Analytic d(OCV)/d(SOC) at the given SOC."""
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"SOC {soc} outside [0, 1]")
    return float(np.polyval(np.polyder(np.asarray(coeffs)), soc))


def terminal_voltage(s: BatteryState, i_b: float, p: PackParams) -> float:
    """Pack terminal voltage for battery current i_b (positive = discharge)."""
    return ocv(s.soc, p.ocv_coeffs) - s.v_cts - s.v_ctl - p.r_s * i_b


def step_battery(s: BatteryState, i_b: float, dt: float, p: PackParams) -> BatteryState:
    """Advance the battery by dt seconds with i_b held constant.

    SOC integrates the current exactly; each RC branch uses its exact
    exponential zero-order-hold solution.  The SOC is not clamped: use
    soc_excursion() to detect departures from the validity window.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    soc = s.soc - i_b * dt / p.q_coulomb
    d_ts = math.exp(-dt / p.tau_ts)
    d_tl = math.exp(-dt / p.tau_tl)
    return BatteryState(
        soc=soc,
        v_cts=d_ts * s.v_cts + p.r_ts * (1.0 - d_ts) * i_b,
        v_ctl=d_tl * s.v_ctl + p.r_tl * (1.0 - d_tl) * i_b,
    )


def soc_excursion(soc: float, p: PackParams) -> float:
    """Signed distance outside the validity window (0 when inside)."""
    lo, hi = p.soc_window
    if soc < lo:
        return soc - lo
    if soc > hi:
        return soc - hi
    return 0.0


def perturb_pack(p: PackParams, fraction: float) -> PackParams:
    """Copy of the pack with all RC/capacity parameters off by `fraction`.

    Used by the estimator sensitivity harness; the OCV polynomial is left
    untouched (it is the measurement map, not an impedance parameter).
    """
    f = 1.0 + fraction
    return replace(p, r_s=p.r_s * f, r_ts=p.r_ts * f, c_ts=p.c_ts * f,
                   r_tl=p.r_tl * f, c_tl=p.c_tl * f, q_ah=p.q_ah * f)
