"""EKF: predict/update limits, convergence, parameter-error sensitivity."""

import numpy as np
import pytest

from hybridpv import battery, ekf
from hybridpv.battery import BatteryState
from hybridpv.ekf import SensorNoise, SocEkf


@pytest.fixture(scope="module")
def pack():
    return battery.default_pack()


class TestPredict:
    def test_mean_follows_truth_with_exact_params(self, pack):
        truth = BatteryState(0.8, 3.0, 7.0)
        filt = SocEkf(pack, truth, q_diag=(0.0, 0.0, 0.0))
        for _ in range(50):
            truth = battery.step_battery(truth, 0.0, 1.0, pack)
            filt.predict(0.0, 1.0)
        assert filt.mean[0] == pytest.approx(truth.soc, abs=1e-12)
        assert filt.mean[1] == pytest.approx(truth.v_cts, rel=1e-12)
        assert filt.mean[2] == pytest.approx(truth.v_ctl, rel=1e-12)

    def test_covariance_grows_without_updates(self, pack):
        # trace growth holds once the contracting branch entries sit at
        # their noise equilibrium (the SOC row has no contraction at all)
        q = (1e-10, 1e-6, 1e-6)
        p_eq = [q[1] / (1.0 - np.exp(-2.0 / pack.tau_ts)),
                q[2] / (1.0 - np.exp(-2.0 / pack.tau_tl))]
        filt = SocEkf(pack, BatteryState(0.8, 0.0, 0.0), q_diag=q,
                      p0=np.diag([1e-4, p_eq[0], p_eq[1]]))
        traces, soc_vars = [], []
        for _ in range(50):
            filt.predict(100.0, 1.0)
            traces.append(np.trace(filt.cov))
            soc_vars.append(filt.cov[0, 0])
        assert all(b >= a - 1e-18 for a, b in zip(traces, traces[1:]))
        assert all(b >= a for a, b in zip(soc_vars, soc_vars[1:]))

    def test_soc_drop_matches_battery_step(self, pack):
        filt = SocEkf(pack, BatteryState(0.9, 0.0, 0.0))
        filt.predict(576.0, 100.0)
        assert 0.9 - filt.mean[0] == pytest.approx(0.1, rel=1e-12)


class TestUpdate:
    def test_zero_innovation_keeps_state(self, pack):
        s = BatteryState(0.8, 2.0, 5.0)
        filt = SocEkf(pack, s)
        v_exact = battery.terminal_voltage(s, 50.0, pack)
        before = filt.mean.copy()
        filt.update(v_exact, 50.0)
        assert np.allclose(filt.mean, before, atol=1e-9)

    def test_huge_r_suppresses_update(self, pack):
        filt = SocEkf(pack, BatteryState(0.8, 0.0, 0.0), r_voltage=1e18)
        before = filt.mean.copy()
        filt.update(1500.0, 100.0)
        assert np.allclose(filt.mean, before, atol=1e-6)

    def test_covariance_symmetric(self, pack):
        rng = np.random.default_rng(4)
        filt = SocEkf(pack, BatteryState(0.75, 0.0, 0.0))
        truth = BatteryState(0.7, 0.0, 0.0)
        for _ in range(200):
            i_b = float(rng.uniform(-300, 300))
            truth = battery.step_battery(truth, i_b, 1.0, pack)
            filt.predict(i_b, 1.0)
            filt.update(battery.terminal_voltage(truth, i_b, pack) + rng.normal(0, 1.6), i_b)
            assert np.max(np.abs(filt.cov - filt.cov.T)) <= 1e-12

    def test_converges_under_noise(self, pack):
        # +0.05 initial SOC offset, default sensors: inside 1% after 300 s
        rng = np.random.default_rng(11)
        noise = SensorNoise()
        truth = BatteryState(0.7, 0.0, 0.0)
        filt = SocEkf(pack, BatteryState(0.75, 0.0, 0.0))
        profile = ekf.square_wave_profile(600, period_s=200.0, amplitude_a=250.0)
        errs = []
        for k in range(600):
            i_b = float(profile[k])
            truth = battery.step_battery(truth, i_b, 1.0, pack)
            v = battery.terminal_voltage(truth, i_b, pack) + rng.normal(0, noise.sigma_voltage)
            i_m = i_b + rng.normal(0, noise.sigma_current)
            filt.predict(i_m, 1.0)
            filt.update(v, i_m)
            errs.append(abs(filt.soc - truth.soc))
        assert max(errs[300:]) < 0.01


class TestSensitivity:
    @pytest.fixture(scope="class")
    def result(self, pack):
        profile = ekf.square_wave_profile(4 * 1200, period_s=1200.0, amplitude_a=300.0)
        return ekf.sensitivity_run(pack, 0.05, profile, seed=19)

    def test_base_case_small_bias(self, result):
        assert abs(result.discharge_bias["base"]) < 0.01

    def test_plus_errors_overestimate_on_discharge(self, result):
        assert result.discharge_bias["plus"] > result.discharge_bias["base"]
        assert result.discharge_bias["plus"] > 0

    def test_minus_errors_mirror(self, result):
        assert result.discharge_bias["minus"] < result.discharge_bias["base"]
        assert result.discharge_bias["minus"] < 0

    def test_base_rmse_smallest(self, result):
        assert result.rmse["base"] < result.rmse["plus"]
        assert result.rmse["base"] < result.rmse["minus"]

    def test_deterministic(self, pack, result):
        profile = ekf.square_wave_profile(4 * 1200, period_s=1200.0, amplitude_a=300.0)
        again = ekf.sensitivity_run(pack, 0.05, profile, seed=19)
        assert np.array_equal(again.soc_est["plus"], result.soc_est["plus"])

    def test_csv_writer(self, result, tmp_path):
        path = tmp_path / "sens.csv"
        ekf.write_sensitivity_csv(result, path)
        header = path.read_text().splitlines()[0]
        assert header == "time,SOC_true,SOC_est_base,SOC_est_plus5,SOC_est_minus5"
        assert len(path.read_text().splitlines()) == result.time.size + 1
