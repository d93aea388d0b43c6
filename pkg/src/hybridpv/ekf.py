"""Extended Kalman filter for the battery states (SOC and both RC voltages).

The state transition is linear for a measured current, so the predict step
uses the battery module's exact discrete step and a constant Jacobian; the
only nonlinearity is the OCV term in the voltage measurement.  A parameter
sensitivity harness runs truth and deliberately mis-parameterized filters
side by side on the same noise realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import battery
from .battery import BatteryState, PackParams


@dataclass
class SensorNoise:
    """Gaussian measurement noise, sized from standard dc sensor classes:
    0.1% of 1600 V full scale and 0.5% of 650 A full scale."""

    sigma_voltage: float = 1.6
    sigma_current: float = 3.25


class SocEkf:
    """EKF over (SOC, V_Cts, V_Ctl) from pack voltage/current measurements."""

    def __init__(self, pack: PackParams, x0: BatteryState,
                 p0=None, q_diag=(1e-10, 1e-6, 1e-6), r_voltage=1.6 ** 2):
        self.pack = pack
        self.mean = np.array([x0.soc, x0.v_cts, x0.v_ctl])
        self.cov = np.diag([0.01, 1.0, 1.0]) if p0 is None else np.asarray(p0, dtype=float).copy()
        self.q = np.diag(q_diag)
        self.r = r_voltage

    @property
    def soc(self) -> float:
        """SOC estimate clamped to [0, 1] for reporting."""
        return float(min(max(self.mean[0], 0.0), 1.0))

    def state(self) -> BatteryState:
        return BatteryState(soc=self.soc, v_cts=float(self.mean[1]), v_ctl=float(self.mean[2]))

    def _model_state(self) -> BatteryState:
        return BatteryState(soc=float(self.mean[0]), v_cts=float(self.mean[1]),
                            v_ctl=float(self.mean[2]))

    def predict(self, i_meas: float, dt: float):
        """Propagate mean with the exact discrete step; P <- F P F' + Q dt."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        nxt = battery.step_battery(self._model_state(), i_meas, dt, self.pack)
        self.mean = np.array([nxt.soc, nxt.v_cts, nxt.v_ctl])
        f = np.diag([1.0, math.exp(-dt / self.pack.tau_ts), math.exp(-dt / self.pack.tau_tl)])
        self.cov = f @ self.cov @ f.T + self.q * dt
        self.cov = 0.5 * (self.cov + self.cov.T)

    def update(self, v_meas: float, i_meas: float):
        """Fold in one terminal-voltage measurement (Joseph-form update)."""
        soc_eval = min(max(self.mean[0], 0.0), 1.0)
        v_pred = (battery.ocv(soc_eval, self.pack.ocv_coeffs)
                  - self.mean[1] - self.mean[2] - self.pack.r_s * i_meas)
        h = np.array([battery.ocv_derivative(soc_eval, self.pack.ocv_coeffs), -1.0, -1.0])
        s = float(h @ self.cov @ h) + self.r
        k = (self.cov @ h) / s
        self.mean = self.mean + k * (v_meas - v_pred)
        ikh = np.eye(3) - np.outer(k, h)
        self.cov = ikh @ self.cov @ ikh.T + np.outer(k, k) * self.r
        self.cov = 0.5 * (self.cov + self.cov.T)


def square_wave_profile(duration_s: float, period_s: float = 1200.0,
                        amplitude_a: float = 300.0) -> np.ndarray:
    """Charge/discharge cycling current, one value per second (+ = discharge)."""
    t = np.arange(int(duration_s))
    return np.where((t // (period_s / 2)) % 2 == 0, amplitude_a, -amplitude_a)


@dataclass
class SensitivityResult:
    time: np.ndarray
    current: np.ndarray
    soc_true: np.ndarray
    soc_est: dict             # label -> np.ndarray
    discharge_bias: dict      # label -> mean(est - true) over discharge steps
    charge_bias: dict
    rmse: dict


def sensitivity_run(pack: PackParams, perturbation: float, profile: np.ndarray,
                    seed, soc0: float = 0.7, soc0_offset: float = 0.05,
                    noise: SensorNoise = SensorNoise(), dt: float = 1.0
                    ) -> SensitivityResult:
    """Run truth plus base/over/under-parameterized filters on one profile.

    The perturbation is applied to all impedance and capacity parameters of
    the filter's model only; truth, noise draws and the initial estimate
    offset are shared across the three filters.
    """
    rng = np.random.default_rng(seed)
    labels = {"base": 0.0, "plus": perturbation, "minus": -perturbation}
    filters = {
        name: SocEkf(battery.perturb_pack(pack, p), BatteryState(soc0 + soc0_offset, 0.0, 0.0))
        for name, p in labels.items()
    }
    truth = BatteryState(soc0, 0.0, 0.0)
    n = profile.size
    soc_true = np.empty(n)
    soc_est = {name: np.empty(n) for name in filters}
    for k in range(n):
        i_b = float(profile[k])
        truth = battery.step_battery(truth, i_b, dt, pack)
        v_meas = battery.terminal_voltage(truth, i_b, pack) + rng.normal(0.0, noise.sigma_voltage)
        i_meas = i_b + rng.normal(0.0, noise.sigma_current)
        for name, ekf in filters.items():
            ekf.predict(i_meas, dt)
            ekf.update(v_meas, i_meas)
            soc_est[name][k] = ekf.soc
        soc_true[k] = truth.soc

    discharging = profile > 0
    charging = profile < 0
    res = SensitivityResult(
        time=np.arange(n, dtype=float) * dt, current=profile.astype(float),
        soc_true=soc_true, soc_est=soc_est,
        discharge_bias={k: float(np.mean(v[discharging] - soc_true[discharging]))
                        for k, v in soc_est.items()},
        charge_bias={k: float(np.mean(v[charging] - soc_true[charging]))
                     for k, v in soc_est.items()},
        rmse={k: float(np.sqrt(np.mean((v - soc_true) ** 2))) for k, v in soc_est.items()},
    )
    return res


def write_sensitivity_csv(res: SensitivityResult, path):
    with open(path, "w") as fh:
        fh.write("time,SOC_true,SOC_est_base,SOC_est_plus5,SOC_est_minus5\n")
        for k in range(res.time.size):
            fh.write(f"{res.time[k]!r},{res.soc_true[k]!r},{res.soc_est['base'][k]!r},"
                     f"{res.soc_est['plus'][k]!r},{res.soc_est['minus'][k]!r}\n")
