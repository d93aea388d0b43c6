"""Forecast emulation: error filtering, taper shape, block forecast bounds."""

import numpy as np
import pytest

from hybridpv import forecast
from hybridpv.forecast import ForecastContext


class TestErrorFilter:
    def test_zero_sigma_stays_zero(self):
        ctx = ForecastContext(sigma_60s=0.0)
        rng = np.random.default_rng(1)
        for _ in range(1000):
            forecast.advance_error(ctx, 1.0, rng)
        assert ctx.e == 0.0

    def test_step_response_time_constant(self):
        ctx = ForecastContext(sigma_60s=0.1, resample_period_s=1e9)
        ctx.e_raw = 0.08
        ctx._since_draw = 0.0
        rng = np.random.default_rng(0)
        for _ in range(60):
            forecast.advance_error(ctx, 1.0, rng)
        assert ctx.e == pytest.approx(0.08 * (1 - np.exp(-1.0)), rel=1e-6)

    def test_long_run_std_near_sigma(self):
        # filtered error std over 24 h stays within 15% of the 60-s rRMSE
        ctx = ForecastContext(sigma_60s=0.082)
        rng = np.random.default_rng(42)
        es = np.empty(86400)
        for k in range(es.size):
            forecast.advance_error(ctx, 1.0, rng)
            es[k] = ctx.e
        assert np.std(es) == pytest.approx(0.082, rel=0.15)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            forecast.advance_error(ForecastContext(), 0.0, np.random.default_rng(0))

    def test_determinism(self):
        def run(seed):
            ctx = ForecastContext()
            rng = np.random.default_rng(seed)
            return [forecast.advance_error(ctx, 1.0, rng).e for _ in range(2000)]

        assert run(7) == run(7)
        assert run(7) != run(8)


class TestTaper:
    def test_anchors(self):
        assert forecast.taper(3.0) == pytest.approx(0.05)
        assert forecast.taper(60.0) == pytest.approx(1.0)

    def test_midpoint(self):
        assert forecast.taper(30.0) == pytest.approx(0.05 + 0.95 * 27.0 / 57.0, rel=1e-12)
        assert forecast.taper(30.0) == pytest.approx(0.50, abs=0.01)

    def test_monotone(self):
        leads = np.linspace(3.0, 60.0, 58)
        vals = [forecast.taper(h) for h in leads]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_20s_band_matches_reported_accuracy(self):
        # 8.2% sixty-second error tapers to roughly the reported ~3.2% at 20 s
        assert 0.027 <= forecast.taper(20.0) * 0.082 <= 0.034


class TestNowcastPreview:
    def test_exact_when_no_error(self):
        ctx = ForecastContext()
        truth = np.linspace(1e6, 2e6, 20)
        assert np.array_equal(forecast.nowcast_preview(truth, ctx), truth)

    def test_tapered_errors(self):
        ctx = ForecastContext()
        ctx.e = 0.08
        truth = np.ones(20) * 1e6
        out = forecast.nowcast_preview(truth, ctx)
        assert out[-1] == pytest.approx(1e6 * 1.08, rel=1e-12)      # 60 s ahead
        assert out[0] == pytest.approx(1e6 * (1 + 0.004), rel=1e-12)  # 3 s ahead

    def test_error_magnitude_shrinks_with_lead(self):
        ctx = ForecastContext()
        ctx.e = -0.05
        out = forecast.nowcast_preview(np.ones(20), ctx)
        errs = np.abs(out - 1.0)
        assert np.all(np.diff(errs) >= -1e-15)

    def test_rejects_preview_past_60s(self):
        with pytest.raises(ValueError):
            forecast.nowcast_preview(np.ones(21), ForecastContext())

    def test_never_negative(self):
        ctx = ForecastContext()
        ctx.e = -2.0  # absurd error cannot produce negative power
        assert np.all(forecast.nowcast_preview(np.ones(20), ctx) >= 0.0)


class TestBlockForecast:
    def test_identity_for_zero_mean(self):
        assert forecast.block_forecast(0.0, np.random.default_rng(0)) == 0.0

    def test_within_band(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            out = forecast.block_forecast(1e6, rng)
            assert 0.9e6 <= out <= 1.1e6

    def test_rejects_negative_mean(self):
        with pytest.raises(ValueError):
            forecast.block_forecast(-1.0, np.random.default_rng(0))
