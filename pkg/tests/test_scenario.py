"""Scenario machinery: setpoints, reserve policy, synthetic RegD, thermal unit."""

import numpy as np
import pytest

from hybridpv import scenario
from hybridpv.scenario import (BaselineSchedule, RegulationSignal, ReservePolicy,
                               ThermalUnitParams, ThermalUnitState)


class TestSetpoint:
    def setup_method(self):
        self.schedule = BaselineSchedule(block_values=np.array([1e6, 1.5e6, 0.5e6]))
        self.reg = RegulationSignal(samples=np.array([2e5, -1e5, 3e5]),
                                    capacity=1e6, activation_s=2000.0)

    def test_baseline_only_before_activation(self):
        assert scenario.setpoint_at(100.0, self.schedule, self.reg) == 1e6
        assert scenario.setpoint_at(1900.0, self.schedule, self.reg) == 1.5e6

    def test_regulation_superimposed(self):
        assert scenario.setpoint_at(2000.0, self.schedule, self.reg) == 1.5e6 + 2e5
        assert scenario.setpoint_at(2002.5, self.schedule, self.reg) == 1.5e6 - 1e5

    def test_scale_applies_to_baseline_only(self):
        v = scenario.setpoint_at(2000.0, self.schedule, self.reg, scale=0.75)
        assert v == 0.75 * 1.5e6 + 2e5

    def test_sample_and_hold(self):
        vals = [scenario.setpoint_at(2000.0 + dt, self.schedule, self.reg)
                for dt in (0.0, 0.5, 1.0, 1.9)]
        assert len(set(vals)) == 1

    def test_zero_regulation_trace(self):
        reg = scenario.zero_regulation()
        assert scenario.setpoint_at(1000.0, self.schedule, reg) == 1e6

    def test_vectorized_schedule_lookup(self):
        times = np.array([-5.0, 0.0, 1800.0, 5400.0, 1e9])
        vals = self.schedule.values_at(times)
        assert list(vals) == [0.0, 1e6, 1.5e6, 0.5e6, 0.5e6]


class TestReserveTarget:
    def test_no_regulation(self):
        assert scenario.reserve_target(0.0) == 5e5

    def test_full_relief(self):
        assert scenario.reserve_target(5e5) == 0.0
        assert scenario.reserve_target(9e5) == 0.0

    def test_downward_regulation_no_relief(self):
        assert scenario.reserve_target(-3e5) == 5e5

    def test_nonincreasing_in_upward_regulation(self):
        vals = [scenario.reserve_target(r) for r in np.linspace(0, 6e5, 61)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_custom_policy(self):
        pol = ReservePolicy(base=4e5, relief_cap=8e5)
        assert scenario.reserve_target(4e5, pol) == pytest.approx(2e5)


class TestSynthRegd:
    def test_deterministic(self):
        a = scenario.synth_regd(3600.0, 1e6, seed=5)
        b = scenario.synth_regd(3600.0, 1e6, seed=5)
        assert np.array_equal(a.samples, b.samples)

    def test_bounded(self):
        reg = scenario.synth_regd(86400.0, 1e6, seed=9)
        assert np.max(np.abs(reg.samples)) <= 5e5

    def test_nearly_zero_mean(self):
        reg = scenario.synth_regd(86400.0, 1e6, seed=11)
        assert abs(np.mean(reg.samples)) <= 0.02 * 1e6

    def test_moves_substantially(self):
        reg = scenario.synth_regd(86400.0, 1e6, seed=2)
        assert np.std(reg.samples) > 0.05e6

    def test_rejects_bad_duration(self):
        with pytest.raises(ValueError):
            scenario.synth_regd(0.0, 1e6, seed=1)


class TestThermalUnit:
    def test_fixed_point(self):
        s = scenario.thermal_unit_initial(0.0)
        s2 = scenario.thermal_step(s, 0.0, 1.0)
        assert s2.output == pytest.approx(s.output, rel=1e-12)
        assert s.output == pytest.approx(7.5e5)

    def test_offset_at_zero_request(self):
        s = scenario.thermal_unit_initial(0.0)
        for _ in range(300):
            s = scenario.thermal_step(s, 0.0, 1.0)
        assert s.output == pytest.approx(7.5e5, rel=1e-9)

    def test_step_takes_a_minute_per_08mw(self):
        s = scenario.thermal_unit_initial(0.0)
        target = 0.8e6
        t = 0
        while abs(s.output - (target + 7.5e5)) > 1e4 and t < 600:
            s = scenario.thermal_step(s, target, 1.0)
            t += 1
        assert t >= 60

    def test_ramp_limit_over_any_minute(self):
        rng = np.random.default_rng(3)
        s = scenario.thermal_unit_initial(0.0)
        outputs = []
        req = 0.0
        for k in range(1800):
            if k % 10 == 0:
                req = rng.uniform(-7.5e5, 7.5e5)
            s = scenario.thermal_step(s, req, 1.0)
            outputs.append(s.output)
        outputs = np.array(outputs)
        ramps = np.abs(outputs[60:] - outputs[:-60])
        assert np.max(ramps) <= 0.8e6 + 1e-6

    def test_output_never_negative(self):
        s = scenario.thermal_unit_initial(0.0)
        for _ in range(600):
            s = scenario.thermal_step(s, -5e6, 1.0)
            assert s.output >= 0.0

    def test_rejects_large_dt(self):
        with pytest.raises(ValueError):
            scenario.thermal_step(ThermalUnitState(), 0.0, 2.0)
