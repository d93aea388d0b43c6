"""Run-level metrics: tracking RMSE, reserve satisfaction, error histogram."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# fixed 25-kW bins spanning +/-1 MW; outliers are clipped into the edge bins
HIST_BIN_W = 25e3
HIST_EDGES = np.arange(-1e6, 1e6 + HIST_BIN_W, HIST_BIN_W)


@dataclass
class Metrics:
    tracking_rmse: float
    reserve_satisfaction: float      # fraction of active steps meeting the floor
    active_steps: int
    hist_counts: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)
    energy_pv_ac_mwh: float = 0.0
    energy_bess_discharge_mwh: float = 0.0
    energy_bess_charge_mwh: float = 0.0
    max_abs_error: float = 0.0


def error_histogram(errors: np.ndarray) -> np.ndarray:
    clipped = np.clip(errors, HIST_EDGES[0], HIST_EDGES[-1] - 1e-9)
    counts, _ = np.histogram(clipped, bins=HIST_EDGES)
    return counts


def compute_metrics(log, reserve_tolerance: float = 1e3) -> Metrics:
    """Metrics over the active-tracking window (steps with a nonzero setpoint)."""
    if log.t.size == 0:
        raise ValueError("empty result log")
    active = log.p_ref != 0.0
    if not np.any(active):
        active = np.ones(log.t.size, dtype=bool)
    err = log.p_out[active] - log.p_ref[active]
    ok = log.p_res[active] >= log.reserve_target[active] - reserve_tolerance
    dt_h = 1.0 / 3600.0
    p_bess = log.p_bess
    return Metrics(
        tracking_rmse=float(np.sqrt(np.mean(err ** 2))),
        reserve_satisfaction=float(np.mean(ok)),
        active_steps=int(np.sum(active)),
        hist_counts=error_histogram(err),
        hist_edges=HIST_EDGES.copy(),
        energy_pv_ac_mwh=float(np.sum(log.p_pv_ac) * dt_h / 1e6),
        energy_bess_discharge_mwh=float(np.sum(np.maximum(p_bess, 0.0)) * dt_h / 1e6),
        energy_bess_charge_mwh=float(-np.sum(np.minimum(p_bess, 0.0)) * dt_h / 1e6),
        max_abs_error=float(np.max(np.abs(err))),
    )
