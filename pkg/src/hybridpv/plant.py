"""Five-state hybrid plant model: battery pack dynamics plus PV power state.

States: (SOC, V_Cts, V_Ctl, I_b, P_pv).  Manipulated inputs are the
battery-current and PV-power ramp rates; the available PV power enters as
a measured disturbance that only shows up in the reserve output.  The
state dynamics are linear; all nonlinearity lives in the output map, so
the adaptive controller re-linearizes only the output rows each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import battery
from . import pv
from .battery import BatteryState, PackParams
from .pv import PvReferenceParams

N_STATES = 5
N_INPUTS = 3   # u1, u2 manipulated; u3 = available PV power (disturbance)
N_OUTPUTS = 5  # plant power, battery current, SOC, reserves, PV power


@dataclass(frozen=True)
class PlantParameters:
    """Physical description of the plant (defaults follow Table I)."""

    pv_ref: PvReferenceParams = field(default_factory=pv.default_reference)
    n_arrays: int = 4
    pack: PackParams = field(default_factory=battery.default_pack)
    eta_pv: float = 0.965
    eta_charge: float = 0.965
    eta_discharge: float = 0.965
    i_b_rate: float = 130.0    # |u1| bound [A/s]
    p_pv_rate: float = 4e5     # |u2| bound [W/s]

    @property
    def p_bess_nominal(self) -> float:
        return self.pack.p_nominal


@dataclass(frozen=True)
class PlantState:
    soc: float
    v_cts: float
    v_ctl: float
    i_b: float
    p_pv: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.soc, self.v_cts, self.v_ctl, self.i_b, self.p_pv])

    @staticmethod
    def from_vector(x: np.ndarray) -> "PlantState":
        return PlantState(*map(float, x))

    def battery_state(self) -> BatteryState:
        return BatteryState(soc=self.soc, v_cts=self.v_cts, v_ctl=self.v_ctl)


@dataclass(frozen=True)
class LinearModel:
    """Affine snapshot of the plant at one linearization point."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    y_offset: np.ndarray
    ad: np.ndarray
    bd: np.ndarray
    ts: float


def eta_bess(i_b: float, p: PlantParameters) -> float:
    """Efficiency branch per the battery direction (discharge at i_b = 0)."""
    return p.eta_discharge if i_b >= 0.0 else p.eta_charge


def output_map(x: PlantState, u3: float, p: PlantParameters) -> np.ndarray:
    """Nonlinear outputs (P_out, I_b, SOC, P_res, P_pv) at state x.

    P_out combines the battery ac power (terminal voltage times current,
    through the direction-dependent efficiency) with the PV ac power.
    P_res measures how much further up the plant could move: battery
    headroom to its nominal power plus curtailed PV, both at ac.
    """
    eta_b = eta_bess(x.i_b, p)
    v_b = battery.terminal_voltage(x.battery_state(), x.i_b, p.pack)
    p_batt_dc = v_b * x.i_b
    p_out = eta_b * p_batt_dc + p.eta_pv * x.p_pv
    p_res = eta_b * (p.p_bess_nominal - p_batt_dc) + p.eta_pv * (u3 - x.p_pv)
    return np.array([p_out, x.i_b, x.soc, p_res, x.p_pv])


def build_continuous(p: PlantParameters) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (A, B) of the five-state model; B's disturbance column is zero."""
    pk = p.pack
    a = np.zeros((N_STATES, N_STATES))
    a[0, 3] = -1.0 / pk.q_coulomb
    a[1, 1] = -1.0 / pk.tau_ts
    a[1, 3] = 1.0 / pk.c_ts
    a[2, 2] = -1.0 / pk.tau_tl
    a[2, 3] = 1.0 / pk.c_tl
    b = np.zeros((N_STATES, N_INPUTS))
    b[3, 0] = 1.0
    b[4, 1] = 1.0
    return a, b


def linearize_outputs(x: PlantState, u3: float, p: PlantParameters
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact output Jacobians (C, D) and the affine offset at (x, u3).

    The offset makes the affine model reproduce output_map exactly at the
    linearization point.  The efficiency branch is frozen at the sign of
    x.i_b for the whole linearization.
    """
    eta_b = eta_bess(x.i_b, p)
    pk = p.pack
    v_oc = battery.ocv(x.soc, pk.ocv_coeffs)
    dv_oc = battery.ocv_derivative(x.soc, pk.ocv_coeffs)
    bracket = v_oc - x.v_cts - x.v_ctl - 2.0 * pk.r_s * x.i_b

    c = np.zeros((N_OUTPUTS, N_STATES))
    c[0] = [eta_b * dv_oc * x.i_b, -eta_b * x.i_b, -eta_b * x.i_b,
            eta_b * bracket, p.eta_pv]
    c[1, 3] = 1.0
    c[2, 0] = 1.0
    c[3] = [-eta_b * dv_oc * x.i_b, eta_b * x.i_b, eta_b * x.i_b,
            -eta_b * bracket, -p.eta_pv]
    c[4, 4] = 1.0

    d = np.zeros((N_OUTPUTS, N_INPUTS))
    d[3, 2] = p.eta_pv

    u = np.array([0.0, 0.0, u3])
    y_offset = output_map(x, u3, p) - c @ x.as_vector() - d @ u
    return c, d, y_offset


def discretize_zoh(a: np.ndarray, b: np.ndarray, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if ts <= 0:
        raise ValueError("ts must be positive")
    n, m = b.shape
    block = np.zeros((n + m, n + m))
    block[:n, :n] = a
    block[:n, n:] = b
    phi = expm(block * ts)
    return phi[:n, :n], phi[:n, n:]


def linearize(x: PlantState, u3: float, p: PlantParameters, ts: float) -> LinearModel:
    a, b = build_continuous(p)
    c, d, y_offset = linearize_outputs(x, u3, p)
    ad, bd = discretize_zoh(a, b, ts)
    return LinearModel(a=a, b=b, c=c, d=d, y_offset=y_offset, ad=ad, bd=bd, ts=ts)


# Units differ by six orders of magnitude across the states, so the rank
# test works on scaled coordinates: (1, 1 V, 1 V, 1000 A, 1 MW).
STATE_SCALE = np.array([1.0, 1.0, 1.0, 1e3, 1e6])


def controllability_rank(a: np.ndarray, b: np.ndarray,
                         state_scale: np.ndarray | None = None,
                         rel_tol: float = 1e-10) -> int:
    """Numerical rank of [B AB ... A^(n-1)B] on scaled states."""
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    if state_scale is None:
        state_scale = np.ones(n)
    t_inv = np.diag(1.0 / np.asarray(state_scale, dtype=float))
    t = np.diag(np.asarray(state_scale, dtype=float))
    a_s = t_inv @ a @ t
    b_s = t_inv @ b
    blocks = [b_s]
    for _ in range(n - 1):
        blocks.append(a_s @ blocks[-1])
    r = np.hstack(blocks)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))
