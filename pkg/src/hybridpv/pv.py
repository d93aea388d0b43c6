"""Single-diode PV array model with a closed-form maximum power point.

The module I-V curve is the implicit single-diode equation.  Its maximum
power point is evaluated in closed form through the Lambert W function,
which lets the simulator recompute the available dc power of the whole
array every second without an inner sweep.  A safeguarded Newton solver
for the implicit curve is kept alongside as the independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BOLTZMANN_EV = 8.617333262e-5   # eV/K
SILICON_BAND_GAP_EV = 1.12


@dataclass(frozen=True)
class DiodeParams:
    """Five-parameter single-diode description of one module.

    a      modified ideality factor [V] (diode factor x cells x thermal voltage)
    r_s    series resistance [ohm]
    r_sh   shunt resistance [ohm]
    i_ph   photocurrent [A]
    i_s    diode saturation current [A]
    """

    a: float
    r_s: float
    r_sh: float
    i_ph: float
    i_s: float

    def __post_init__(self):
        if not (self.a > 0 and self.r_sh > 0 and self.i_s > 0):
            raise ValueError("a, r_sh and i_s must be positive")
        if self.r_s < 0 or self.i_ph < 0:
            raise ValueError("r_s and i_ph must be nonnegative")


@dataclass(frozen=True)
class PvReferenceParams:
    """Module diode parameters at STC plus array topology.

    k_i is the short-circuit current temperature coefficient [A/degC];
    g_ref / t_ref are the reference irradiance [W/m2] and cell
    temperature [degC] the diode parameters were fitted at.
    """

    stc: DiodeParams
    k_i: float
    g_ref: float = 1000.0
    t_ref: float = 25.0
    n_series: int = 16
    n_parallel: int = 153

    def __post_init__(self):
        if self.n_series < 1 or self.n_parallel < 1:
            raise ValueError("array topology counts must be >= 1")


@dataclass(frozen=True)
class MppResult:
    v_mp: float   # V
    i_mp: float   # A
    p_mp: float   # W
    w: float      # Lambert W value used (dimensionless)


# Canadian Solar CS6P-250P, fitted once from the datasheet card
# (Isc 8.87 A, Voc 37.2 V, Vmp 30.1 V, Imp 8.30 A, 60 cells) so that the
# closed-form maximum power point reproduces the datasheet MPP exactly
# with a 1 kOhm shunt.  See fit_module_reference() below.
CS6P_250P = DiodeParams(
    a=2.0413039554935732,
    r_s=0.1680594171625481,
    r_sh=1000.0,
    i_ph=8.871490802748971,
    i_s=1.075828238442077e-07,
)

# 0.065 %/degC of Isc per the datasheet.
CS6P_250P_KI = 0.00065 * 8.87


def default_reference() -> PvReferenceParams:
    """One 612 kWdc array: 153 parallel strings of 16 CS6P-250P modules."""
    return PvReferenceParams(stc=CS6P_250P, k_i=CS6P_250P_KI)


def lambert_w(x):
    """Principal-branch Lambert W for nonnegative arguments.

    Accepts scalars or arrays.  Asymptotic initial guess plus Halley
    iteration; the update is written in terms of x*exp(-w) so arguments up
    to ~1e300 cannot overflow.  Residual |w e^w - x| <= 1e-12 * max(x, 1).
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("lambert_w is defined here for x >= 0 only")
    scalar = arr.ndim == 0
    v = np.atleast_1d(arr).copy()

    w = np.where(v < np.e, v / (1.0 + v), 1.0)
    big = v >= np.e
    if np.any(big):
        l1 = np.log(v[big])
        l2 = np.log(l1)
        w[big] = l1 - l2 + l2 / l1

    for _ in range(50):
        f = w - v * np.exp(-w)
        denom = (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
        step = f / denom
        w -= step
        if np.all(np.abs(step) <= 1e-16 * (1.0 + np.abs(w))):
            break

    return float(w[0]) if scalar else w.reshape(arr.shape)


def scale_to_conditions(ref: PvReferenceParams, g: float, t_cell: float) -> DiodeParams:
    """Translate the STC diode parameters to irradiance g and cell temperature t_cell.

    Photocurrent scales linearly with irradiance and with the current
    temperature coefficient; the saturation current follows the cubic
    temperature / band-gap law; the modified ideality factor is
    proportional to absolute temperature.  r_s and r_sh are held constant.
    """
    if g < 0:
        raise ValueError("irradiance must be nonnegative")
    a, i_ph, i_s = _scaled_parts(ref, g, t_cell)
    return DiodeParams(a=float(a), r_s=ref.stc.r_s, r_sh=ref.stc.r_sh,
                       i_ph=float(i_ph), i_s=float(i_s))


def _scaled_parts(ref: PvReferenceParams, g, t_cell):
    """(a, i_ph, i_s) at the given conditions; numpy-broadcastable."""
    t_k = np.asarray(t_cell, dtype=float) + 273.15
    t_ref_k = ref.t_ref + 273.15
    i_ph = (np.asarray(g, dtype=float) / ref.g_ref) * (ref.stc.i_ph + ref.k_i * (np.asarray(t_cell) - ref.t_ref))
    i_s = ref.stc.i_s * (t_k / t_ref_k) ** 3 * np.exp(
        (SILICON_BAND_GAP_EV / BOLTZMANN_EV) * (1.0 / t_ref_k - 1.0 / t_k))
    a = ref.stc.a * t_k / t_ref_k
    return a, i_ph, i_s


def _mpp_parts(a, r_s, r_sh, i_ph, i_s):
    """Closed-form (v_mp, i_mp, w); numpy-broadcastable, zero where dark."""
    i_ph = np.atleast_1d(np.asarray(i_ph, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), i_ph.shape)
    i_s = np.broadcast_to(np.asarray(i_s, dtype=float), i_ph.shape)
    lit = i_ph > 0.0
    x = np.where(lit, i_ph * np.e / i_s, 0.0)
    w = np.atleast_1d(lambert_w(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = (1.0 + r_s / r_sh) * a * (w - 1.0) - r_s * i_ph * (1.0 - 1.0 / w)
        i = i_ph * (1.0 - 1.0 / w) - a * (w - 1.0) / r_sh
    good = lit & (v > 0.0) & (i > 0.0)
    v = np.where(good, v, 0.0)
    i = np.where(good, i, 0.0)
    return v, i, w


def solve_mpp(p: DiodeParams) -> MppResult:
    """Closed-form module maximum power point (zero-power result when dark)."""
    v, i, w = _mpp_parts(p.a, p.r_s, p.r_sh, p.i_ph, p.i_s)
    v, i, w = float(v[0]), float(i[0]), float(w[0])
    return MppResult(v_mp=v, i_mp=i, p_mp=v * i, w=w)


def array_mpp(module: MppResult, n_series: int, n_parallel: int) -> MppResult:
    """Scale a module MPP to the array under uniform irradiance."""
    if n_series < 1 or n_parallel < 1:
        raise ValueError("counts must be >= 1")
    return MppResult(v_mp=module.v_mp * n_series,
                     i_mp=module.i_mp * n_parallel,
                     p_mp=module.p_mp * n_series * n_parallel,
                     w=module.w)


def mpp_power_series(ref: PvReferenceParams, g, t_cell) -> np.ndarray:
    """Vectorized array-level P_mp [W] over irradiance/temperature series."""
    a, i_ph, i_s = _scaled_parts(ref, g, t_cell)
    v, i, _ = _mpp_parts(a, ref.stc.r_s, ref.stc.r_sh, i_ph, i_s)
    return (v * i * ref.n_series * ref.n_parallel).reshape(np.shape(g))


def iv_current(v: float, p: DiodeParams, tol: float = 1e-9, max_iter: int = 80) -> float:
    """Solve the implicit diode equation for the terminal current at voltage v.

    Safeguarded Newton (bisection fallback inside a sign-changing bracket).
    Used as the brute-force oracle for the closed-form MPP.
    """

    def f(i):
        expo = np.clip((v + i * p.r_s) / p.a, -600.0, 600.0)
        return p.i_ph - p.i_s * math.expm1(expo) - (v + i * p.r_s) / p.r_sh - i

    lo, hi = -4.0 * (p.i_ph + 1.0) - v / p.r_sh, p.i_ph + 1.0
    flo, fhi = f(lo), f(hi)
    while flo < 0.0:
        lo -= abs(lo) + 1.0
        flo = f(lo)
    while fhi > 0.0:
        hi += abs(hi) + 1.0
        fhi = f(hi)

    i = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fi = f(i)
        if abs(fi) <= tol:
            return i
        if fi > 0.0:
            lo = i
        else:
            hi = i
        expo = np.clip((v + i * p.r_s) / p.a, -600.0, 600.0)
        dfdi = -p.i_s * math.exp(expo) * p.r_s / p.a - p.r_s / p.r_sh - 1.0
        step = i - fi / dfdi
        i = step if lo < step < hi else 0.5 * (lo + hi)
    raise RuntimeError(f"iv_current did not reach |f|<={tol} in {max_iter} iterations")


def open_circuit_voltage(p: DiodeParams) -> float:
    """Terminal voltage where the module current crosses zero."""
    if p.i_ph <= 0.0:
        return 0.0
    hi = p.a * math.log(p.i_ph / p.i_s + 1.0) + 1.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if iv_current(mid, p) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def sweep_mpp(p: DiodeParams, n: int = 10000) -> MppResult:
    """Brute-force maximum of v * iv_current(v) over an n-point voltage grid."""
    if p.i_ph <= 0.0:
        return MppResult(0.0, 0.0, 0.0, 0.0)
    voc = open_circuit_voltage(p)
    vs = np.linspace(0.0, voc, n)
    powers = np.array([v * iv_current(v, p) for v in vs])
    k = int(np.argmax(powers))
    i_k = powers[k] / vs[k] if vs[k] > 0 else 0.0
    return MppResult(v_mp=float(vs[k]), i_mp=float(i_k), p_mp=float(powers[k]), w=0.0)


def fit_module_reference(i_sc: float, v_oc: float, v_mp: float, i_mp: float,
                         r_sh: float = 1000.0) -> DiodeParams:
    """Fit (a, r_s, i_ph, i_s) so the closed-form MPP lands exactly on the
    datasheet MPP while the implicit curve passes through (0, Isc) and
    (Voc, 0).  The shunt resistance is pinned (the datasheet does not
    constrain it independently).  This is the offline routine that produced
    the CS6P_250P constants.
    """
    from scipy.optimize import least_squares

    def implicit(v, i, a, r_s, i_ph, i_s):
        return i_ph - i_s * math.expm1((v + i * r_s) / a) - (v + i * r_s) / r_sh - i

    def residuals(theta):
        a, r_s, i_ph, log_i_s = theta
        i_s = math.exp(log_i_s)
        v_cf, i_cf, _ = _mpp_parts(a, r_s, r_sh, i_ph, i_s)
        return [implicit(0.0, i_sc, a, r_s, i_ph, i_s),
                implicit(v_oc, 0.0, a, r_s, i_ph, i_s),
                (float(v_cf[0]) - v_mp) * (i_mp / v_mp),
                float(i_cf[0]) - i_mp]

    sol = least_squares(residuals, [1.6, 0.2, i_sc, math.log(1e-9)],
                        xtol=3e-16, ftol=3e-16, gtol=3e-16)
    a, r_s, i_ph, log_i_s = sol.x
    return DiodeParams(a=float(a), r_s=float(r_s), r_sh=r_sh,
                       i_ph=float(i_ph), i_s=float(math.exp(log_i_s)))
