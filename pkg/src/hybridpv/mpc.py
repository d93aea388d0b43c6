"""Receding-horizon controller for the hybrid plant.

Each control step re-linearizes the plant output map at the estimated
state, condenses the prediction over the horizon into a dense QP on the
control moves plus one shared constraint-softening slack, and returns the
first optimal move.  Moves beyond the control horizon stay frozen at the
last optimized value, so the prediction matrices carry an accumulating
tail block for that move.

All decision variables are scaled (inputs by their rate scale factors,
output rows by the output scale factors) before the QP sees them; the
soft-constraint gains multiply the shared slack in those scaled units,
which is what makes one dimensionless slack meaningful across outputs
measured in watts, amps and SOC fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import plant as plant_mod
from .plant import LinearModel, PlantParameters, PlantState
from .qp import QpProblem, solve_qp
from .scenario import BaselineSchedule, RegulationSignal, ReservePolicy, reserve_target

N_Y = 5
N_U = 2


@dataclass(frozen=True)
class MpcConfig:
    """Controller tuning; defaults are the plant's published tuning set."""

    ts: float = 3.0
    horizon: int = 400               # prediction steps p
    control_horizon: int = 20        # optimized moves m
    w_y: tuple = (3.0, 0.0, 0.1, 0.0, 0.0)
    s_y: tuple = (2e6, 1200.0, 1.0, 4e6, 2e6)
    w_du: tuple = (0.01, 0.002)
    s_du: tuple = (280.0, 8e5)
    ecr_min: tuple = (1.0, 0.5, 0.5, 4.0, 0.3)
    ecr_max: tuple = (1.0, 0.5, 0.5, 5.0, 0.3)
    u_min: tuple = (-130.0, -4e5)
    u_max: tuple = (130.0, 4e5)
    y_min: tuple = (-1e6, -550.0, 0.295, -3e6, 0.0)
    y_max: tuple = (3e6, 650.0, 0.975, 3e6, 2e6)
    slack_penalty: float = 1e5
    soc_target: float = 0.90

    def __post_init__(self):
        if not (self.horizon >= self.control_horizon >= 1):
            raise ValueError("need p >= m >= 1")
        if min(self.s_y) <= 0 or min(self.s_du) <= 0:
            raise ValueError("scale factors must be positive")
        if min(self.w_y) < 0 or min(self.w_du) < 0 or min(self.ecr_min) < 0 or min(self.ecr_max) < 0:
            raise ValueError("weights and softening gains must be nonnegative")


@dataclass
class ReferencePreview:
    """Per-step targets and time-varying bounds over the prediction horizon."""

    power_ref: np.ndarray       # y1 setpoint [W], length p
    soc_ref: np.ndarray         # y3 setpoint, length p
    reserve_floor: np.ndarray   # y4 lower bound [W], length p
    pmp_preview: np.ndarray     # y5 upper bound / u3 preview [W], length p

    def validate(self, p: int):
        for name in ("power_ref", "soc_ref", "reserve_floor", "pmp_preview"):
            v = getattr(self, name)
            if np.asarray(v).shape != (p,):
                raise ValueError(f"{name} must have length {p}")
        if np.any(self.reserve_floor < 0) or np.any(self.pmp_preview < 0):
            raise ValueError("reserve and available-power previews must be nonnegative")


@dataclass
class ControlMove:
    u1: float                   # battery current ramp [A/s]
    u2: float                   # PV power ramp [W/s]
    slack: float
    status: str
    kkt_residual: float
    iterations: int
    predicted_outputs: np.ndarray | None = None   # (p, 5) when requested
    faulted: bool = False


def reference_builder(schedule: BaselineSchedule, t_now: float, reg_now: float,
                      soc_target: float, policy: ReservePolicy,
                      pmp_preview: np.ndarray, cfg: MpcConfig,
                      request_scale: float = 1.0) -> ReferencePreview:
    """Assemble the horizon previews visible to the controller at t_now.

    The regulation value is held constant over the horizon (it is not
    forecastable); the baseline follows the published block schedule; the
    reserve floor applies the relief policy to the held regulation value.
    """
    p = cfg.horizon
    times = t_now + cfg.ts * np.arange(1, p + 1)
    power = request_scale * schedule.values_at(times) + reg_now
    floor = reserve_target(reg_now, policy) * np.ones(p)
    return ReferencePreview(power_ref=power,
                            soc_ref=soc_target * np.ones(p),
                            reserve_floor=floor,
                            pmp_preview=np.asarray(pmp_preview, dtype=float))


class MpcController:
    """Adaptive MPC instance owning prediction matrices and warm-start memory."""

    def __init__(self, params: PlantParameters, cfg: MpcConfig = MpcConfig()):
        self.params = params
        self.cfg = cfg
        p, m = cfg.horizon, cfg.control_horizon
        a, b = plant_mod.build_continuous(params)
        ad, bd = plant_mod.discretize_zoh(a, b, cfg.ts)
        self.ad, self.bd = ad, bd[:, :N_U]

        # stacked free response:  x(k+i) = powers[i] @ x0
        powers = np.empty((p + 1, 5, 5))
        powers[0] = np.eye(5)
        for i in range(1, p + 1):
            powers[i] = ad @ powers[i - 1]
        self.sx = powers[1:]                      # (p, 5, 5)

        # forced response tensor su[i, :, 2j:2j+2] = d x(k+i+1) / d u(j),
        # with the last column block accumulating the held tail
        impulse = np.empty((p, 5, N_U))
        impulse[0] = self.bd
        for i in range(1, p):
            impulse[i] = ad @ impulse[i - 1]
        cum = np.cumsum(impulse, axis=0)
        su = np.zeros((p, 5, N_U * m))
        for j in range(m - 1):
            for i in range(j, p):
                su[i, :, 2 * j:2 * j + 2] = impulse[i - j]
        for i in range(m - 1, p):
            su[i, :, 2 * (m - 1):2 * m] = cum[i - (m - 1)]
        self.su = su

        # soft output bounds are imposed on a condensed horizon grid:
        # every step of the control horizon, then a logarithmically
        # thinning tail.  The rate-limited inputs make the predictions
        # smooth between tail points, and the full-density tracking cost
        # is untouched; this keeps the constraint block tractable.
        tail = np.unique(np.round(np.geomspace(m, p - 1, 14)).astype(int))
        self.constraint_grid = np.concatenate([np.arange(m), tail])
        self.n_grid = self.constraint_grid.size

        # selector-output response maps (constant across linearizations)
        self.g_i_b = su[:, 3, :]     # (p, 2m)
        self.g_soc = su[:, 0, :]
        self.g_p_pv = su[:, 4, :]

        # move-difference operator on scaled moves
        dim = N_U * m
        d_op = np.eye(dim)
        for j in range(1, m):
            d_op[2 * j, 2 * (j - 1)] = -1.0
            d_op[2 * j + 1, 2 * (j - 1) + 1] = -1.0
        self.d_op = d_op

        self.n_var = dim + 1
        self.col_scale = np.concatenate([np.tile(cfg.s_du, m), [1.0]])

        # constraint matrix layout: for each output, grid upper rows then
        # grid lower rows; then input bounds; slack >= 0 comes in as a bound
        ng = self.n_grid
        self._a_ineq = np.zeros((2 * N_Y * ng + 2 * N_U * m, self.n_var))
        ecr_col = np.zeros(2 * N_Y * ng)
        for j in range(N_Y):
            ecr_col[self._rows_ub(j)] = -cfg.ecr_max[j]
            ecr_col[self._rows_lb(j)] = -cfg.ecr_min[j]
        self._a_ineq[:2 * N_Y * ng, -1] = ecr_col
        u_rows = np.zeros((2 * N_U * m, self.n_var))
        for j in range(m):
            for c in range(N_U):
                u_rows[2 * (N_U * j + c), 2 * j + c] = 1.0
                u_rows[2 * (N_U * j + c) + 1, 2 * j + c] = -1.0
        self._a_ineq[2 * N_Y * ng:] = u_rows
        self._b_u = np.empty(2 * N_U * m)
        for j in range(m):
            for c in range(N_U):
                self._b_u[2 * (N_U * j + c)] = cfg.u_max[c] / cfg.s_du[c]
                self._b_u[2 * (N_U * j + c) + 1] = -cfg.u_min[c] / cfg.s_du[c]

        # output rows for the constant selector outputs, pre-scaled
        grid = self.constraint_grid
        for j, g in ((1, self.g_i_b), (2, self.g_soc), (4, self.g_p_pv)):
            g_scaled = (g[grid] * self.col_scale[:-1]) / cfg.s_y[j]
            self._a_ineq[self._rows_ub(j), :-1] = g_scaled
            self._a_ineq[self._rows_lb(j), :-1] = -g_scaled

        # input-bound rows and the slack lower bound (appended after the
        # user rows) always belong in the solver's screening pool
        n_user = 2 * N_Y * ng + 2 * N_U * m
        self._hard_rows = tuple(range(2 * N_Y * ng, n_user)) + (n_user,)
        self._prev_u = np.zeros(N_U)
        self._prev_z = None
        self._warm_active: tuple = ()
        self._lb = np.full(self.n_var, -np.inf)
        self._lb[-1] = 0.0

    def _rows_ub(self, j: int) -> slice:
        ng = self.n_grid
        return slice(2 * ng * j, 2 * ng * j + ng)

    def _rows_lb(self, j: int) -> slice:
        ng = self.n_grid
        return slice(2 * ng * j + ng, 2 * ng * (j + 1))

    @property
    def previous_move(self) -> np.ndarray:
        return self._prev_u.copy()

    def reset(self, u_prev=(0.0, 0.0)):
        self._prev_u = np.asarray(u_prev, dtype=float)
        self._prev_z = None
        self._warm_active = ()

    def _shift_active(self, active) -> tuple:
        """Map the previous solve's active rows one horizon step earlier.

        Soft rows live on the condensed grid, where the same grid slot is
        the nearest equivalent after a one-step shift; input-bound rows
        shift by one move."""
        m = self.cfg.control_horizon
        soft_end = 2 * N_Y * self.n_grid
        input_end = soft_end + 2 * N_U * m
        shifted = set()
        for r in active:
            if r < soft_end:
                shifted.add(r)
            elif r < input_end:
                rem = r - soft_end
                mv, rest = divmod(rem, 2 * N_U)
                shifted.add(soft_end + max(mv - 1, 0) * 2 * N_U + rest)
            else:
                shifted.add(r)
        return tuple(sorted(shifted))

    def build_qp(self, model: LinearModel, x0: PlantState, refs: ReferencePreview
                 ) -> QpProblem:
        """Condense tracking cost, move penalties, slack and soft bounds."""
        cfg = self.cfg
        p, m = cfg.horizon, cfg.control_horizon
        refs.validate(p)
        c, d, y_off = model.c, model.d, model.y_offset

        # free output response over the horizon (disturbance enters y4 only)
        x_free = self.sx @ x0.as_vector()                   # (p, 5)
        y_free = x_free @ c.T + y_off                       # (p, 5)
        y_free[:, 3] += d[3, 2] * refs.pmp_preview

        # state-dependent output response maps: the plant-power map over
        # the full horizon (tracking cost), the reserve map on the
        # constraint grid only (untracked)
        grid = self.constraint_grid
        g_pout = np.einsum("isk,s->ik", self.su, c[0])           # (p, 2m)
        g_pres = np.einsum("isk,s->ik", self.su[grid], c[3])     # (ng, 2m)

        # cost: sum_j (w_j/s_j)^2 (ref - y)^2  +  move penalties  +  slack
        h = np.zeros((self.n_var, self.n_var))
        f = np.zeros(self.n_var)
        col_u = self.col_scale[:-1]
        track = {0: (g_pout, refs.power_ref), 2: (self.g_soc, refs.soc_ref)}
        for j, (g, ref) in track.items():
            wj = cfg.w_y[j]
            if wj == 0.0:
                continue
            alpha = wj / cfg.s_y[j]
            gs = g * col_u
            resid = ref - y_free[:, j]
            h[:-1, :-1] += (alpha * alpha) * (gs.T @ gs)
            f[:-1] += -(alpha * alpha) * (gs.T @ resid)
        w_move = np.tile(np.asarray(cfg.w_du), m)
        dm = self.d_op * w_move[:, None]
        h[:-1, :-1] += dm.T @ dm
        d0 = np.zeros(N_U * m)
        d0[:N_U] = self._prev_u / np.asarray(cfg.s_du)
        f[:-1] += -dm.T @ (w_move * d0)
        h[-1, -1] += cfg.slack_penalty
        h = 0.5 * (h + h.T)

        # soft output bounds on the grid (scaled), hard input bounds
        ng = self.n_grid
        a_ineq = self._a_ineq
        b = np.empty(a_ineq.shape[0])
        y_ub = np.tile(np.asarray(cfg.y_max), (ng, 1))
        y_lb = np.tile(np.asarray(cfg.y_min), (ng, 1))
        y_lb[:, 3] = refs.reserve_floor[grid]
        y_ub[:, 4] = np.minimum(cfg.y_max[4], refs.pmp_preview[grid])
        for j, g in ((0, g_pout[grid]), (3, g_pres)):
            gs = (g * col_u) / cfg.s_y[j]
            a_ineq[self._rows_ub(j), :-1] = gs
            a_ineq[self._rows_lb(j), :-1] = -gs
        y_free_g = y_free[grid]
        for j in range(N_Y):
            b[self._rows_ub(j)] = (y_ub[:, j] - y_free_g[:, j]) / cfg.s_y[j]
            b[self._rows_lb(j)] = (y_free_g[:, j] - y_lb[:, j]) / cfg.s_y[j]
        b[2 * N_Y * ng:] = self._b_u

        return QpProblem(h=h, f=f, a_ineq=a_ineq, b_ineq=b, lb=self._lb)

    def _warm_start(self, prob: QpProblem) -> np.ndarray:
        """Shift the previous solution one step and lift the slack to feasibility."""
        cfg = self.cfg
        m = cfg.control_horizon
        z = np.zeros(self.n_var)
        if self._prev_z is not None:
            z[:-1] = np.concatenate([self._prev_z[N_U:N_U * m], self._prev_z[N_U * (m - 1):N_U * m]])
            z[-1] = self._prev_z[-1]
        u_lo = np.tile(np.asarray(cfg.u_min) / np.asarray(cfg.s_du), m)
        u_hi = np.tile(np.asarray(cfg.u_max) / np.asarray(cfg.s_du), m)
        z[:-1] = np.clip(z[:-1], u_lo, u_hi)
        rows, bvec = prob.a_ineq, prob.b_ineq
        soft = rows[:, -1] < 0.0
        resid = rows[soft, :-1] @ z[:-1] - bvec[soft]
        need = resid / (-rows[soft, -1])
        z[-1] = max(0.0, float(np.max(need, initial=0.0)) * (1.0 + 1e-9))
        return z

    def solve_step(self, model: LinearModel, x0: PlantState, refs: ReferencePreview,
                   want_prediction: bool = False) -> ControlMove:
        """Solve the horizon problem and return the first move (fault -> hold)."""
        prob = self.build_qp(model, x0, refs)
        z0 = self._warm_start(prob)
        # bounded search budget: an instance that walks longer than this is
        # degenerate enough that the solver's interior-point rescue path
        # finishes it faster than the walk would
        sol = solve_qp(prob, z0=z0, working_set=self._shift_active(self._warm_active),
                       pool_hint=self._hard_rows, max_iter=600)
        if sol.status != "optimal":
            move = ControlMove(u1=0.0, u2=0.0, slack=0.0, status=sol.status,
                               kkt_residual=sol.kkt_residual,
                               iterations=sol.iterations, faulted=True)
            self._prev_u = np.zeros(N_U)
            self._prev_z = None
            self._warm_active = ()
            return move
        u = sol.z[:N_U] * np.asarray(self.cfg.s_du)
        u = np.clip(u, self.cfg.u_min, self.cfg.u_max)
        self._prev_u = u.copy()
        self._prev_z = sol.z.copy()
        self._warm_active = tuple(sol.active_set)
        predicted = None
        if want_prediction:
            predicted = self.predict_outputs(model, x0, refs, sol.z)
        return ControlMove(u1=float(u[0]), u2=float(u[1]), slack=float(sol.z[-1]),
                           status=sol.status, kkt_residual=sol.kkt_residual,
                           iterations=sol.iterations, predicted_outputs=predicted)

    def predict_outputs(self, model: LinearModel, x0: PlantState,
                        refs: ReferencePreview, z: np.ndarray) -> np.ndarray:
        """Affine output trajectory (p, 5) for a scaled decision vector z."""
        c, d, y_off = model.c, model.d, model.y_offset
        x_traj = self.sx @ x0.as_vector() + np.einsum(
            "isk,k->is", self.su, z[:-1] * self.col_scale[:-1])
        y = x_traj @ c.T + y_off
        y[:, 3] += d[3, 2] * refs.pmp_preview
        return y
