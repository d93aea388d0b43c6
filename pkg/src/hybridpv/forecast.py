"""Emulated PV forecast products.

Two products feed the controller: a tapered ultra-short-term nowcast of
the available PV power covering the next 60 s, and a per-block average
forecast with uniform +/-10% error used for scheduling and for the preview
tail.  The nowcast error is a resampled Gaussian passed through a one-
minute low-pass filter, then shrunk linearly from its full value at 60 s
ahead down to 5% of it at 3 s ahead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TAPER_NEAR_S = 3.0
TAPER_FAR_S = 60.0
TAPER_FLOOR = 0.05


@dataclass
class ForecastContext:
    """Mutable nowcast-error state (one per simulation run)."""

    sigma_60s: float = 0.082          # rRMSE of the 60-s-ahead nowcast
    resample_period_s: float = 300.0  # fresh error draw cadence
    filter_tau_s: float = 60.0
    e_raw: float = 0.0                # last drawn error sample
    e: float = 0.0                    # low-pass filtered error factor
    _since_draw: float = field(default=np.inf, repr=False)

    @property
    def draw_sigma(self) -> float:
        """Std of the raw draws, inflated so the filtered error keeps
        sigma_60s as its long-run std (the low-pass transition intervals
        would otherwise attenuate the delivered error below the published
        60-s rRMSE)."""
        return self.sigma_60s / _filter_attenuation(self.resample_period_s, self.filter_tau_s)


def _filter_attenuation(period_s: float, tau_s: float) -> float:
    """Long-run std ratio filtered/raw for a piecewise-constant target
    resampled every period_s through a first-order filter (exact)."""
    d = np.exp(-period_s / tau_s)
    v_end = (1.0 - d) / (1.0 + d)
    int_one_minus = period_s - 2.0 * tau_s * (1.0 - d) + 0.5 * tau_s * (1.0 - d * d)
    int_sq = 0.5 * tau_s * (1.0 - d * d)
    return float(np.sqrt((int_one_minus + v_end * int_sq) / period_s))


def advance_error(ctx: ForecastContext, dt: float, rng: np.random.Generator) -> ForecastContext:
    """Advance the error state by dt seconds (draws a new sample when due)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ctx._since_draw += dt
    if ctx._since_draw >= ctx.resample_period_s:
        ctx.e_raw = rng.normal(0.0, ctx.draw_sigma) if ctx.sigma_60s > 0 else 0.0
        ctx._since_draw = 0.0
    decay = np.exp(-dt / ctx.filter_tau_s)
    ctx.e = ctx.e_raw + (ctx.e - ctx.e_raw) * decay
    return ctx


def taper(lead_s: float) -> float:
    """Error shrink factor vs lead time: 0.05 at 3 s, 1.0 at 60 s, linear."""
    frac = (lead_s - TAPER_NEAR_S) / (TAPER_FAR_S - TAPER_NEAR_S)
    return TAPER_FLOOR + (1.0 - TAPER_FLOOR) * min(max(frac, 0.0), 1.0)


def nowcast_preview(future_true_pmp: np.ndarray, ctx: ForecastContext,
                    step_s: float = 3.0) -> np.ndarray:
    """Perturb the true future P_mp values with the tapered error factor.

    Entry i covers lead time (i+1)*step_s; the preview may not extend past
    the 60-s nowcast range.
    """
    future_true_pmp = np.asarray(future_true_pmp, dtype=float)
    m = future_true_pmp.size
    if m * step_s > TAPER_FAR_S + 1e-9:
        raise ValueError("nowcast preview cannot extend past 60 s")
    leads = step_s * np.arange(1, m + 1)
    factors = 1.0 + np.array([taper(h) for h in leads]) * ctx.e
    return np.maximum(future_true_pmp * factors, 0.0)


def block_forecast(true_window_mean: float, rng: np.random.Generator,
                   error_band: float = 0.10) -> float:
    """Average-power forecast for one scheduling block: mean * (1 + U(-10%, +10%))."""
    if true_window_mean < 0:
        raise ValueError("window mean must be nonnegative")
    delta = rng.uniform(-error_band, error_band)
    return true_window_mean * (1.0 + delta)
