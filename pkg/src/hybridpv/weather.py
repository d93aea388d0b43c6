"""Weather series: strict CSV ingestion plus synthetic-day generation.

The CSV contract is one row per second with columns
t_seconds, irradiance_wm2, temperature_c (temperature is treated as cell
temperature).  The synthetic generator is NOT measurement data: it is a
clear-sky curve multiplied by a two-state cloud-transmittance process,
provided because the measured irradiance datasets the plant model was
validated against are proprietary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 3)."""


WEATHER_HEADER = ["t_seconds", "irradiance_wm2", "temperature_c"]


@dataclass(frozen=True)
class WeatherSeries:
    t: np.ndarray        # seconds, 1-s cadence starting anywhere
    g: np.ndarray        # W/m2
    t_cell: np.ndarray   # degC

    @property
    def duration(self) -> int:
        return self.t.size


def load_weather_csv(path) -> WeatherSeries:
    """Load and validate a weather CSV (1-s cadence, monotone, no gaps)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in WEATHER_HEADER:
            if col not in header:
                raise DataError(f"{path}: missing column '{col}'")
        idx = [header.index(c) for c in WEATHER_HEADER]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(tuple(float(row[i]) for i in idx))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: unparsable row")
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows)
    t, g, t_cell = data[:, 0], data[:, 1], data[:, 2]
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DataError(f"{path}: time column must be strictly increasing")
    if np.any(np.abs(dt - 1.0) > 1e-9):
        raise DataError(f"{path}: cadence must be 1 s with no gaps")
    if np.any(g < 0):
        raise DataError(f"{path}: negative irradiance")
    return WeatherSeries(t=t, g=g, t_cell=t_cell)


def write_weather_csv(series: WeatherSeries, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEATHER_HEADER)
        for k in range(series.duration):
            writer.writerow([repr(float(series.t[k])), repr(float(series.g[k])),
                             repr(float(series.t_cell[k]))])


def synth_clear_day(duration_s: int = 86400, g_peak: float = 1000.0,
                    sunrise_s: float = 23400.0, sunset_s: float = 63000.0) -> WeatherSeries:
    """Smooth clear-sky day: sine-arch irradiance, mild temperature swing."""
    t = np.arange(duration_s, dtype=float)
    phase = (t - sunrise_s) / (sunset_s - sunrise_s)
    arch = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    g = g_peak * arch ** 1.2
    t_cell = 18.0 + 17.0 * arch
    return WeatherSeries(t=t, g=g, t_cell=t_cell)


def synth_intermittent_day(duration_s: int = 43200, seed=0, g_peak: float = 1000.0,
                           sunrise_s: float = 1800.0, sunset_s: float | None = None,
                           cloud_mean_clear_s: float = 420.0,
                           cloud_mean_cloudy_s: float = 240.0,
                           transmittance_range: tuple = (0.12, 0.45),
                           edge_tau_s: float = 18.0) -> WeatherSeries:
    """High-intermittency day: clear-sky arch times a cloud process.

    Clouds arrive as a two-state renewal process with exponential dwell
    times; the transmittance relaxes toward the state target with a short
    time constant so edges take tens of seconds, like passing cumulus.
    """
    if sunset_s is None:
        sunset_s = duration_s - 1800.0
    if sunset_s <= sunrise_s:
        raise ValueError("day too short: sunset must come after sunrise")
    rng = np.random.default_rng(seed)
    t = np.arange(duration_s, dtype=float)
    phase = (t - sunrise_s) / (sunset_s - sunrise_s)
    arch = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)

    target = np.empty(duration_s)
    k = 0
    cloudy = False
    while k < duration_s:
        if cloudy:
            dwell = int(rng.exponential(cloud_mean_cloudy_s)) + 20
            level = rng.uniform(*transmittance_range)
        else:
            dwell = int(rng.exponential(cloud_mean_clear_s)) + 30
            level = rng.uniform(0.97, 1.0)
        target[k:k + dwell] = level
        k += dwell
        cloudy = not cloudy
    tau = math.exp(-1.0 / edge_tau_s)
    trans = np.empty(duration_s)
    acc = target[0]
    for k in range(duration_s):
        acc = target[k] + (acc - target[k]) * tau
        trans[k] = acc

    g = g_peak * arch ** 1.2 * trans
    t_cell = 16.0 + 16.0 * arch * (0.6 + 0.4 * trans)
    return WeatherSeries(t=t, g=g, t_cell=t_cell)
