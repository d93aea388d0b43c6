"""Closed-loop simulator: plant integration, estimation, control, logging.

The plant integrates at 1 s with the exact discrete model; the controller
runs every third second on the estimated state with fresh previews.
Everything is driven from one seed, so identical configurations produce
bit-identical result files.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import battery, forecast, plant, pv, scenario
from .battery import BatteryState
from .config import RunConfig
from .ekf import SocEkf
from .metrics import Metrics, compute_metrics
from .mpc import MpcController, reference_builder
from .plant import PlantParameters, PlantState
from .scenario import (BaselineSchedule, RegulationSignal, ReservePolicy,
                       ThermalUnitParams, thermal_step, thermal_unit_initial)
from .weather import (DataError, WeatherSeries, load_weather_csv,
                      synth_clear_day, synth_intermittent_day)

RESULT_COLUMNS = ["t", "G", "Tcell", "Pmp", "Pref", "reserve_target", "Pout",
                  "Ppv", "Pbess", "SOC_true", "SOC_est", "Pres", "eps",
                  "u1", "u2", "status"]

# hard validity band on the true SOC; beyond this margin the run aborts
SOC_ABORT_BAND = (0.295, 0.975)
SOC_ABORT_MARGIN = 0.02


class ValidityError(Exception):
    """True SOC left the model validity band (CLI exit code 4)."""


@dataclass
class StepRecord:
    """One second of the run (kept columnar in ResultLog; this view exists
    for spot inspection)."""

    t: float
    g: float
    t_cell: float
    p_mp_true: float
    p_mp_preview1: float
    p_ref: float
    reserve_target: float
    p_out: float
    p_pv_ac: float
    p_bess_ac: float
    soc_true: float
    soc_est: float
    p_res: float
    eps: float
    u1: float
    u2: float
    status: str


@dataclass
class ResultLog:
    t: np.ndarray
    g: np.ndarray
    t_cell: np.ndarray
    p_mp: np.ndarray
    p_mp_preview1: np.ndarray
    p_ref: np.ndarray
    reserve_target: np.ndarray
    p_out: np.ndarray
    p_pv_ac: np.ndarray
    p_bess: np.ndarray
    soc_true: np.ndarray
    soc_est: np.ndarray
    p_res: np.ndarray
    eps: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    status: list
    meta: dict = field(default_factory=dict)

    def record(self, k: int) -> StepRecord:
        return StepRecord(self.t[k], self.g[k], self.t_cell[k], self.p_mp[k],
                          self.p_mp_preview1[k], self.p_ref[k],
                          self.reserve_target[k], self.p_out[k], self.p_pv_ac[k],
                          self.p_bess[k], self.soc_true[k], self.soc_est[k],
                          self.p_res[k], self.eps[k], self.u1[k], self.u2[k],
                          self.status[k])

    def to_csv(self, path):
        cols = [self.t, self.g, self.t_cell, self.p_mp, self.p_ref,
                self.reserve_target, self.p_out, self.p_pv_ac, self.p_bess,
                self.soc_true, self.soc_est, self.p_res, self.eps,
                self.u1, self.u2]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RESULT_COLUMNS)
            for k in range(self.t.size):
                row = [repr(float(c[k])) for c in cols]
                row.append(self.status[k])
                writer.writerow(row)


def load_result_csv(path) -> ResultLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULT_COLUMNS:
            raise DataError(f"{path}: unexpected result columns {header}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    num = np.array([[float(x) for x in row[:-1]] for row in rows])
    status = [row[-1] for row in rows]
    return ResultLog(t=num[:, 0], g=num[:, 1], t_cell=num[:, 2], p_mp=num[:, 3],
                     p_mp_preview1=np.full(num.shape[0], np.nan),
                     p_ref=num[:, 4], reserve_target=num[:, 5], p_out=num[:, 6],
                     p_pv_ac=num[:, 7], p_bess=num[:, 8], soc_true=num[:, 9],
                     soc_est=num[:, 10], p_res=num[:, 11], eps=num[:, 12],
                     u1=num[:, 13], u2=num[:, 14], status=status)


def _weather_for(cfg: RunConfig, seed_seq) -> WeatherSeries:
    w = cfg.weather
    if w.source == "csv":
        return load_weather_csv(w.path)
    if w.source == "clear":
        return synth_clear_day(duration_s=w.duration_s, g_peak=w.g_peak)
    return synth_intermittent_day(duration_s=w.duration_s, g_peak=w.g_peak,
                                  seed=np.random.default_rng(seed_seq))


def _regulation_for(cfg: RunConfig, duration: float, seed_seq,
                    capacity=None) -> RegulationSignal:
    r = cfg.regulation
    cap = r.capacity_w if capacity is None else capacity
    if r.source == "none":
        return scenario.zero_regulation(cap)
    if r.source == "csv":
        return load_regulation_csv(r.path, cap)
    return scenario.synth_regd(duration, cap, np.random.default_rng(seed_seq),
                               activation_s=r.activation_s, stop_s=r.stop_s)


def load_regulation_csv(path, capacity: float) -> RegulationSignal:
    """Regulation trace CSV: t_seconds, reg_watts at a strict 2-s cadence."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_seconds", "reg_watts"]:
            raise DataError(f"{path}: header must be 't_seconds, reg_watts'")
        rows = [(float(r[0]), float(r[1])) for r in reader]
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows)
    if np.any(np.abs(np.diff(data[:, 0]) - 2.0) > 1e-9):
        raise DataError(f"{path}: cadence must be 2 s")
    return RegulationSignal(samples=data[:, 1], capacity=capacity,
                            activation_s=float(data[0, 0]))


def _plant_step(x: PlantState, u: np.ndarray, ad: np.ndarray, bd: np.ndarray,
                pmp_next: float) -> tuple[PlantState, bool]:
    """One exact discrete step; the PV state is clipped to availability."""
    xv = ad @ x.as_vector() + bd @ u
    clipped = False
    if xv[4] > pmp_next:
        xv[4] = pmp_next
        clipped = True
    if xv[4] < 0.0:
        xv[4] = 0.0
        clipped = True
    return PlantState.from_vector(xv), clipped


def build_schedule(pmp_true: np.ndarray, block_s: float, pv_cap: float,
                   eta_pv: float, rng, error_band: float) -> tuple[BaselineSchedule, np.ndarray]:
    """Per-block baselines from the emulated average-power forecast.

    Returns the ac schedule and the dc block forecasts (the controller's
    preview tail reuses them).
    """
    n = pmp_true.size
    n_blocks = int(np.ceil(n / block_s))
    fc = np.empty(n_blocks)
    for k in range(n_blocks):
        lo, hi = int(k * block_s), min(int((k + 1) * block_s), n)
        mean = float(np.mean(np.minimum(pmp_true[lo:hi], pv_cap)))
        fc[k] = forecast.block_forecast(mean, rng, error_band)
    return BaselineSchedule(block_values=eta_pv * fc, block_s=block_s), fc


def run_simulation(cfg: RunConfig) -> ResultLog:
    cfg.validate()
    params = PlantParameters()
    mpc_cfg = cfg.mpc
    dt = cfg.dt_sim
    mpc_period = int(round(mpc_cfg.ts / dt))

    root = np.random.SeedSequence(cfg.seed)
    ss_weather, ss_reg, ss_fc, ss_noise = root.spawn(4)
    weather = _weather_for(cfg, ss_weather)
    n = weather.duration
    pmp_true = pv.mpp_power_series(params.pv_ref, weather.g, weather.t_cell) * params.n_arrays
    reg = _regulation_for(cfg, n * dt, ss_reg)

    rng_fc = np.random.default_rng(ss_fc)
    rng_noise = np.random.default_rng(ss_noise)
    schedule, block_fc_dc = build_schedule(
        pmp_true, cfg.scenario.baseline_block_s, mpc_cfg.y_max[4],
        params.eta_pv, rng_fc, cfg.forecast.block_error_band)
    policy = ReservePolicy(base=cfg.scenario.reserve_base_w,
                           relief_cap=cfg.scenario.reserve_relief_cap_w)
    fctx = forecast.ForecastContext(sigma_60s=cfg.forecast.sigma_60s,
                                    resample_period_s=cfg.forecast.resample_period_s)

    controller = MpcController(params, mpc_cfg)
    ad1, bd1 = plant.discretize_zoh(*plant.build_continuous(params), dt)
    bd1 = bd1[:, :2]

    x = PlantState(soc=cfg.soc_initial, v_cts=0.0, v_ctl=0.0, i_b=0.0, p_pv=0.0)
    est0 = min(cfg.soc_initial + cfg.noise.soc_estimate_offset, 1.0)
    ekf = SocEkf(params.pack, BatteryState(est0, 0.0, 0.0),
                 r_voltage=cfg.noise.sigma_voltage_v ** 2)
    i_meas = x.i_b + rng_noise.normal(0.0, cfg.noise.sigma_current_a)

    cols = {name: np.empty(n) for name in
            ("t", "g", "t_cell", "p_mp", "p_mp_preview1", "p_ref", "reserve_target",
             "p_out", "p_pv_ac", "p_bess", "soc_true", "soc_est", "p_res",
             "eps", "u1", "u2")}
    status: list = [""] * n
    u = np.zeros(2)
    eps_now = 0.0
    status_now = "startup"
    preview1 = pmp_true[0]
    clip_events = 0
    worst_kkt = 0.0
    m_ctrl = mpc_cfg.control_horizon

    for k in range(n):
        t = k * dt
        forecast.advance_error(fctx, dt, rng_fc)
        if k % mpc_period == 0:
            reg_now = reg.value_at(t)
            idx = np.minimum(k + mpc_period * np.arange(1, m_ctrl + 1), n - 1)
            nowcast = forecast.nowcast_preview(pmp_true[idx], fctx, mpc_cfg.ts)
            block_now = block_fc_dc[min(int(t // cfg.scenario.baseline_block_s),
                                        block_fc_dc.size - 1)]
            pmp_preview = np.concatenate(
                [nowcast, np.full(mpc_cfg.horizon - m_ctrl, max(block_now, 0.0))])
            refs = reference_builder(schedule, t, reg_now, cfg.scenario.soc_target,
                                     policy, pmp_preview, mpc_cfg,
                                     cfg.scenario.request_scale)
            est = ekf.state()
            x_est = PlantState(soc=est.soc, v_cts=est.v_cts, v_ctl=est.v_ctl,
                               i_b=i_meas, p_pv=x.p_pv)
            model = plant.linearize(x_est, pmp_true[k], params, mpc_cfg.ts)
            move = controller.solve_step(model, x_est, refs)
            u = np.array([move.u1, move.u2])
            eps_now = move.slack
            status_now = move.status
            preview1 = nowcast[0]
            worst_kkt = max(worst_kkt, move.kkt_residual)

        y = plant.output_map(x, pmp_true[k], params)
        cols["t"][k] = t
        cols["g"][k] = weather.g[k]
        cols["t_cell"][k] = weather.t_cell[k]
        cols["p_mp"][k] = pmp_true[k]
        cols["p_mp_preview1"][k] = preview1
        cols["p_ref"][k] = scenario.setpoint_at(t, schedule, reg,
                                                cfg.scenario.request_scale)
        cols["reserve_target"][k] = scenario.reserve_target(reg.value_at(t), policy)
        cols["p_out"][k] = y[0]
        cols["p_pv_ac"][k] = params.eta_pv * x.p_pv
        cols["p_bess"][k] = y[0] - params.eta_pv * x.p_pv
        cols["soc_true"][k] = x.soc
        cols["soc_est"][k] = ekf.soc
        cols["p_res"][k] = y[3]
        cols["eps"][k] = eps_now
        cols["u1"][k] = u[0]
        cols["u2"][k] = u[1]
        status[k] = status_now

        x, clipped = _plant_step(x, u, ad1, bd1, pmp_true[min(k + 1, n - 1)])
        clip_events += clipped
        if not (SOC_ABORT_BAND[0] - SOC_ABORT_MARGIN <= x.soc
                <= SOC_ABORT_BAND[1] + SOC_ABORT_MARGIN):
            raise ValidityError(f"true SOC {x.soc:.4f} left the validity band at t={t + dt:.0f} s")

        v_meas = (battery.terminal_voltage(x.battery_state(), x.i_b, params.pack)
                  + rng_noise.normal(0.0, cfg.noise.sigma_voltage_v))
        i_new = x.i_b + rng_noise.normal(0.0, cfg.noise.sigma_current_a)
        ekf.predict(0.5 * (i_meas + i_new), dt)
        ekf.update(v_meas, i_new)
        i_meas = i_new

    meta = {"seed": cfg.seed, "case_label": cfg.case_label,
            "soc_initial": cfg.soc_initial, "dt_sim": dt,
            "request_scale": cfg.scenario.request_scale,
            "clip_events": clip_events, "worst_kkt_residual": worst_kkt,
            "hybrid_ramp_capability_w_per_s":
                mpc_cfg.u_max[1] + mpc_cfg.u_max[0] * 1600.0}
    return ResultLog(t=cols["t"], g=cols["g"], t_cell=cols["t_cell"],
                     p_mp=cols["p_mp"], p_mp_preview1=cols["p_mp_preview1"],
                     p_ref=cols["p_ref"], reserve_target=cols["reserve_target"],
                     p_out=cols["p_out"], p_pv_ac=cols["p_pv_ac"],
                     p_bess=cols["p_bess"], soc_true=cols["soc_true"],
                     soc_est=cols["soc_est"], p_res=cols["p_res"],
                     eps=cols["eps"], u1=cols["u1"], u2=cols["u2"],
                     status=status, meta=meta)


def replay_inputs(log: ResultLog, params: PlantParameters | None = None,
                  dt: float = 1.0):
    """Open-loop replay of the logged (u1, u2) through the plant.

    Returns per-step (soc, p_pv, p_out, p_res) recomputed from the initial
    state; used to certify log completeness.
    """
    params = params or PlantParameters()
    ad1, bd1 = plant.discretize_zoh(*plant.build_continuous(params), dt)
    bd1 = bd1[:, :2]
    x = PlantState(soc=log.meta["soc_initial"], v_cts=0.0, v_ctl=0.0,
                   i_b=0.0, p_pv=log.p_pv_ac[0] / params.eta_pv)
    n = log.t.size
    out = {"soc": np.empty(n), "p_pv": np.empty(n), "p_out": np.empty(n),
           "p_res": np.empty(n)}
    for k in range(n):
        y = plant.output_map(x, log.p_mp[k], params)
        out["soc"][k] = x.soc
        out["p_pv"][k] = x.p_pv
        out["p_out"][k] = y[0]
        out["p_res"][k] = y[3]
        x, _ = _plant_step(x, np.array([log.u1[k], log.u2[k]]), ad1, bd1,
                           log.p_mp[min(k + 1, n - 1)])
    return out


@dataclass
class ThermalComparison:
    hybrid: ResultLog
    hybrid_metrics: Metrics
    thermal_t: np.ndarray
    thermal_ref: np.ndarray
    thermal_out: np.ndarray
    thermal_rmse: float
    meta: dict


def run_comparison_thermal(cfg: RunConfig) -> ThermalComparison:
    """Drive the hybrid plant and the ramp-limited thermal unit with the
    same regulation service and compare tracking errors."""
    from dataclasses import replace
    th = cfg.thermal
    cfg = replace(cfg, regulation=replace(cfg.regulation,
                                          capacity_w=th.service_capacity_w))
    hybrid_log = run_simulation(cfg)
    n = hybrid_log.t.size
    tparams = ThermalUnitParams(tau_governor_s=th.tau_governor_s,
                                tau_turbine_s=th.tau_turbine_s,
                                tau_reheater_s=th.tau_reheater_s,
                                f_hp=th.f_hp, ramp_per_min=th.ramp_per_min_w,
                                offset=th.offset_w)
    root = np.random.SeedSequence(cfg.seed)
    _, ss_reg, _, _ = root.spawn(4)
    reg = _regulation_for(cfg, n * cfg.dt_sim, ss_reg,
                          capacity=cfg.regulation.capacity_w)
    state = thermal_unit_initial(0.0, tparams)
    t_arr = hybrid_log.t.copy()
    ref = np.empty(n)
    out = np.empty(n)
    for k in range(n):
        r = reg.value_at(t_arr[k])
        ref[k] = max(0.0, r + tparams.offset)
        out[k] = state.output
        state = thermal_step(state, r, cfg.dt_sim, tparams)
    active = np.abs(ref - tparams.offset) > 0
    active = active if np.any(active) else np.ones(n, dtype=bool)
    thermal_rmse = float(np.sqrt(np.mean((out[active] - ref[active]) ** 2)))
    hybrid_metrics = compute_metrics(hybrid_log)
    meta = {"thermal_ramp_per_min_w": tparams.ramp_per_min,
            "hybrid_ramp_capability_w_per_s":
                hybrid_log.meta["hybrid_ramp_capability_w_per_s"]}
    return ThermalComparison(hybrid=hybrid_log, hybrid_metrics=hybrid_metrics,
                             thermal_t=t_arr, thermal_ref=ref, thermal_out=out,
                             thermal_rmse=thermal_rmse, meta=meta)


def write_thermal_csv(cmp: ThermalComparison, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "Pref", "Pout"])
        for k in range(cmp.thermal_t.size):
            writer.writerow([repr(float(cmp.thermal_t[k])),
                             repr(float(cmp.thermal_ref[k])),
                             repr(float(cmp.thermal_out[k]))])


def write_summary(log: ResultLog, m: Metrics, path, extra: dict | None = None):
    with open(path, "w") as fh:
        fh.write(f"case: {log.meta.get('case_label')}  seed: {log.meta.get('seed')}\n")
        fh.write(f"steps: {log.t.size}  active tracking steps: {m.active_steps}\n")
        fh.write(f"tracking RMSE: {m.tracking_rmse / 1e3:.1f} kW\n")
        fh.write(f"reserve satisfaction: {100 * m.reserve_satisfaction:.2f} %\n")
        fh.write(f"max |error|: {m.max_abs_error / 1e3:.1f} kW\n")
        fh.write(f"PV energy (ac): {m.energy_pv_ac_mwh:.3f} MWh\n")
        fh.write(f"BESS discharge / charge: {m.energy_bess_discharge_mwh:.3f}"
                 f" / {m.energy_bess_charge_mwh:.3f} MWh\n")
        fh.write(f"PV clip events: {log.meta.get('clip_events')}\n")
        fh.write(f"worst QP KKT residual: {log.meta.get('worst_kkt_residual'):.2e}\n")
        fh.write(f"hybrid ramp capability: "
                 f"{log.meta.get('hybrid_ramp_capability_w_per_s') / 1e6:.2f} MW/s\n")
        for key, val in (extra or {}).items():
            fh.write(f"{key}: {val}\n")


def run_and_save(cfg: RunConfig) -> tuple[ResultLog, Metrics, str]:
    os.makedirs(cfg.out_dir, exist_ok=True)
    log = run_simulation(cfg)
    m = compute_metrics(log)
    stem = f"{cfg.case_label}_{cfg.seed}"
    csv_path = os.path.join(cfg.out_dir, f"results_{stem}.csv")
    log.to_csv(csv_path)
    write_summary(log, m, os.path.join(cfg.out_dir, f"summary_{stem}.txt"))
    return log, m, csv_path
