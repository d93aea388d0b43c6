"""Plant state-space: output map, Jacobians, discretization, controllability."""

import numpy as np
import pytest

from hybridpv import battery, plant
from hybridpv.plant import PlantParameters, PlantState


@pytest.fixture(scope="module")
def params():
    return PlantParameters()


def random_state(rng) -> PlantState:
    i_b = rng.uniform(-550.0, 650.0)
    p = battery.default_pack()
    return PlantState(
        soc=rng.uniform(0.3, 0.97),
        v_cts=p.r_ts * i_b * rng.uniform(0.5, 1.0),
        v_ctl=p.r_tl * i_b * rng.uniform(0.5, 1.0),
        i_b=i_b,
        p_pv=rng.uniform(0.0, 2.4e6),
    )


class TestOutputMap:
    def test_pv_only(self, params):
        x = PlantState(0.9, 0.0, 0.0, 0.0, 1e6)
        y = plant.output_map(x, 1e6, params)
        assert y[0] == pytest.approx(0.965e6, rel=1e-12)

    def test_reserves_with_idle_battery_at_mpp(self, params):
        x = PlantState(0.9, 0.0, 0.0, 0.0, 1e6)
        y = plant.output_map(x, 1e6, params)
        assert y[3] == pytest.approx(0.965 * 1e6, rel=1e-12)

    def test_discharging_battery_power(self, params):
        x = PlantState(0.9, 0.0, 0.0, 625.0, 0.0)
        v_b = battery.terminal_voltage(x.battery_state(), 625.0, params.pack)
        y = plant.output_map(x, 0.0, params)
        assert y[0] == pytest.approx(0.965 * v_b * 625.0, rel=1e-12)
        assert y[0] == pytest.approx(1.043e6, rel=5e-3)

    def test_selector_outputs(self, params):
        x = PlantState(0.77, 3.0, 4.0, 123.0, 8e5)
        y = plant.output_map(x, 9e5, params)
        assert y[1] == 123.0
        assert y[2] == 0.77
        assert y[4] == 8e5

    def test_continuity_at_zero_current(self, params):
        x0 = PlantState(0.8, 2.0, 3.0, 0.0, 1e6)
        y0 = plant.output_map(x0, 1.2e6, params)
        for eps in (1e-6, -1e-6):
            x = PlantState(0.8, 2.0, 3.0, eps, 1e6)
            y = plant.output_map(x, 1.2e6, params)
            assert abs(y[0] - y0[0]) < 1e-2


class TestContinuousModel:
    def test_structure(self, params):
        a, b = plant.build_continuous(params)
        assert a[0, 3] == pytest.approx(-1.0 / 576000.0, rel=1e-12)
        assert a[1, 1] == pytest.approx(-1.0 / params.pack.tau_ts, rel=1e-12)
        assert a[1, 1] == pytest.approx(-1.135, rel=1e-3)
        assert np.all(a[3:] == 0.0)
        assert b[3, 0] == 1.0 and b[4, 1] == 1.0
        assert np.all(b[:, 2] == 0.0)

    def test_controllability_full_rank(self, params):
        a, b = plant.build_continuous(params)
        assert plant.controllability_rank(a, b, plant.STATE_SCALE) == 5

    def test_zero_b_rank(self, params):
        a, _ = plant.build_continuous(params)
        assert plant.controllability_rank(a, np.zeros((5, 2))) == 0

    def test_integrator_chain_rank(self):
        n = 4
        a = np.diag(np.ones(n - 1), 1)
        b = np.zeros((n, 1))
        b[-1, 0] = 1.0
        assert plant.controllability_rank(a, b) == n


class TestLinearization:
    def test_jacobian_matches_finite_differences(self, params):
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = random_state(rng)
            u3 = rng.uniform(0.0, 2.4e6)
            c, d, _ = plant.linearize_outputs(x, u3, params)
            xv = x.as_vector()
            scale = np.array([1e-7, 1e-4, 1e-4, 1e-2, 1.0])
            for j in range(5):
                dx = np.zeros(5)
                dx[j] = scale[j]
                if x.i_b >= 0 and j == 3:
                    # keep the probe on the frozen efficiency branch
                    if xv[3] - scale[3] < 0:
                        continue
                yp = plant.output_map(PlantState.from_vector(xv + dx), u3, params)
                ym = plant.output_map(PlantState.from_vector(xv - dx), u3, params)
                fd = (yp - ym) / (2 * dx[j])
                for k in range(5):
                    ref = max(abs(fd[k]), abs(c[k, j]))
                    if ref < 1e-9:
                        continue
                    assert abs(c[k, j] - fd[k]) <= 1e-6 * ref + 1e-9

    def test_offset_reproduces_output(self, params):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = random_state(rng)
            u3 = rng.uniform(0.0, 2.4e6)
            c, d, off = plant.linearize_outputs(x, u3, params)
            y_affine = c @ x.as_vector() + d @ np.array([0.0, 0.0, u3]) + off
            assert np.allclose(y_affine, plant.output_map(x, u3, params), rtol=1e-12, atol=1e-9)

    def test_idle_battery_row_matches_printed_form(self, params):
        x = PlantState(0.85, 1.0, 2.0, 0.0, 1.5e6)
        c, d, _ = plant.linearize_outputs(x, 1.6e6, params)
        v_oc = battery.ocv(0.85, params.pack.ocv_coeffs)
        assert c[0, 0] == 0.0
        assert c[0, 1] == 0.0 and c[0, 2] == 0.0
        assert c[0, 3] == pytest.approx(0.965 * (v_oc - 1.0 - 2.0), rel=1e-12)
        assert c[0, 4] == pytest.approx(0.965, rel=1e-12)
        assert d[3, 2] == pytest.approx(0.965, rel=1e-12)

    def test_selector_rows_constant(self, params):
        rng = np.random.default_rng(5)
        for _ in range(10):
            c, _, _ = plant.linearize_outputs(random_state(rng), 1e6, params)
            assert np.array_equal(c[1], [0, 0, 0, 1, 0])
            assert np.array_equal(c[2], [1, 0, 0, 0, 0])
            assert np.array_equal(c[4], [0, 0, 0, 0, 1])


class TestDiscretization:
    def test_pure_gain(self):
        ad, bd = plant.discretize_zoh(np.zeros((2, 2)), np.eye(2), 0.5)
        assert np.allclose(ad, np.eye(2))
        assert np.allclose(bd, 0.5 * np.eye(2))

    def test_matches_analytic_forms(self, params):
        a, b = plant.build_continuous(params)
        ts = 3.0
        ad, bd = plant.discretize_zoh(a, b, ts)
        pk = params.pack
        q = pk.q_coulomb
        # branch decay
        assert ad[1, 1] == pytest.approx(np.exp(-ts / pk.tau_ts), abs=1e-9)
        assert ad[1, 1] == pytest.approx(0.0332, abs=2e-4)
        assert ad[2, 2] == pytest.approx(np.exp(-ts / pk.tau_tl), abs=1e-9)
        # SOC / current nilpotent block
        assert ad[0, 3] == pytest.approx(-ts / q, abs=1e-15)
        assert bd[0, 0] == pytest.approx(-ts ** 2 / (2 * q), abs=1e-15)
        # branch forced terms
        assert ad[1, 3] == pytest.approx(pk.r_ts * (1 - np.exp(-ts / pk.tau_ts)), abs=1e-9)
        assert bd[1, 0] == pytest.approx(pk.r_ts * (ts - pk.tau_ts * (1 - np.exp(-ts / pk.tau_ts))), abs=1e-9)
        assert bd[3, 0] == pytest.approx(ts, abs=1e-12)
        assert bd[4, 1] == pytest.approx(ts, abs=1e-12)

    def test_rejects_bad_ts(self, params):
        a, b = plant.build_continuous(params)
        with pytest.raises(ValueError):
            plant.discretize_zoh(a, b, 0.0)


class TestOneStepFidelity:
    def test_affine_prediction_close_to_nonlinear(self, params):
        # operational states (branch voltages near quasi-steady), inputs
        # within ramp bounds; errors measured against the output constraint
        # spans (the natural percentage basis across mixed units)
        rng = np.random.default_rng(23)
        spans = np.array([3e6 - (-1e6), 650.0 - (-550.0), 0.975 - 0.295,
                          3e6 - (-3e6), 2e6])
        a, b = plant.build_continuous(params)
        ad, bd = plant.discretize_zoh(a, b, 3.0)
        for _ in range(200):
            x = random_state(rng)
            u3 = rng.uniform(0.0, 2.4e6)
            u = np.array([rng.uniform(-130, 130), rng.uniform(-4e5, 4e5), u3])
            c, d, off = plant.linearize_outputs(x, u3, params)
            xv2 = ad @ x.as_vector() + bd @ u
            y_pred = c @ xv2 + d @ u + off
            x2 = PlantState.from_vector(xv2)
            if not (0.0 <= x2.soc <= 1.0) or (x.i_b >= 0) != (x2.i_b >= 0):
                continue
            y_true = plant.output_map(x2, u3, params)
            assert np.all(np.abs(y_pred - y_true) <= 0.01 * spans)
