"""Dense convex QP solver: primal active-set method with warm starting.

Solves  min 0.5 z'Hz + f'z  s.t.  A z <= b  (plus optional variable lower
bounds).  Tailored to the receding-horizon use: the constraint set is
large but almost entirely inactive, so each solve screens rows down to a
candidate pool (violated or near-active at the start point, plus any rows
the caller pins), certifies the full set afterwards, and grows the pool on
demand with a ray-projection restoration step so feasibility is never
lost.  Termination inside the working-set loop uses the predicted cost
decrement rather than the raw step norm, which keeps the loop robust on
the badly scaled Hessians condensed MPC produces.  Deterministic: ties in
blocking or leaving constraints break toward the lowest constraint index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class QpProblem:
    h: np.ndarray                   # (n, n) symmetric positive definite
    f: np.ndarray                   # (n,)
    a_ineq: np.ndarray              # (m, n); may have zero rows
    b_ineq: np.ndarray              # (m,)
    lb: np.ndarray | None = None    # optional variable lower bounds (-inf allowed)

    def validate(self):
        h, f = np.asarray(self.h), np.asarray(self.f)
        if h.shape != (f.size, f.size):
            raise ValueError("H must be n x n")
        if np.max(np.abs(h - h.T)) > 1e-12 * max(1.0, np.max(np.abs(h))):
            raise ValueError("H must be symmetric")


@dataclass
class QpSolution:
    z: np.ndarray
    active_set: list = field(default_factory=list)
    kkt_residual: float = np.inf
    status: str = "optimal"         # optimal | max_iterations | infeasible
    iterations: int = 0
    multipliers: np.ndarray | None = None


def _stacked_rows(prob: QpProblem):
    """User rows followed by lower-bound rows (-e_j z <= -lb_j)."""
    a = np.asarray(prob.a_ineq, dtype=float).reshape(-1, len(prob.f))
    b = np.asarray(prob.b_ineq, dtype=float).reshape(-1)
    if prob.lb is not None:
        lb = np.asarray(prob.lb, dtype=float)
        finite = np.where(np.isfinite(lb))[0]
        if finite.size:
            extra = np.zeros((finite.size, len(prob.f)))
            extra[np.arange(finite.size), finite] = -1.0
            a = np.vstack([a, extra])
            b = np.concatenate([b, -lb[finite]])
    return a, b


def _phase1(rows: np.ndarray, b: np.ndarray, n: int) -> np.ndarray | None:
    from scipy.optimize import linprog
    res = linprog(np.zeros(n), A_ub=rows, b_ub=b,
                  bounds=[(None, None)] * n, method="highs")
    return res.x if res.success else None


def _interior_point_fallback(h, f, rows, b):
    """Guaranteed-convergent backup for the rare instance whose active-set
    path exhausts its budget (extreme degeneracy).  Returns (z, duals); the
    caller crosses the answer over to an exact vertex/face solution."""
    import cvxopt
    cvxopt.solvers.options["show_progress"] = False
    cvxopt.solvers.options["abstol"] = 1e-10
    cvxopt.solvers.options["reltol"] = 1e-10
    cvxopt.solvers.options["feastol"] = 1e-9
    cvxopt.solvers.options["maxiters"] = 200
    scale = max(1.0, float(np.max(np.abs(h))))
    try:
        sol = cvxopt.solvers.qp(cvxopt.matrix(h / scale), cvxopt.matrix(f / scale),
                                cvxopt.matrix(rows), cvxopt.matrix(b))
    except (ValueError, ArithmeticError):
        return None, None
    if sol.get("status") not in ("optimal", "unknown") or sol.get("x") is None:
        return None, None
    z = np.asarray(sol["x"]).reshape(-1)
    lam = np.asarray(sol["z"]).reshape(-1) * scale if sol.get("z") is not None else None
    return z, lam


def _refined_solve(mat: np.ndarray, rhs: np.ndarray, refine: bool = True) -> np.ndarray:
    try:
        x = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(mat, rhs, rcond=None)[0]
    if refine:
        # refinement keeps residuals small even when the Hessian spans
        # many orders of magnitude
        for _ in range(2):
            r = rhs - mat @ x
            try:
                x += np.linalg.solve(mat, r)
            except np.linalg.LinAlgError:
                break
    return x


def _kkt_solve(h: np.ndarray, g: np.ndarray, aw: np.ndarray, rw=None, refine: bool = True):
    """Step p and multipliers for  min q(z + p)  s.t.  aw (z + p) = b_w.

    rw carries the working-set residual b_w - aw z, so a working set the
    iterate is not yet sitting on pulls the step onto its manifold
    (inhomogeneous equality-constrained QP)."""
    nw = aw.shape[0]
    n = h.shape[0]
    if nw == 0:
        return _refined_solve(h, -g, refine), np.zeros(0)
    kkt = np.zeros((n + nw, n + nw))
    kkt[:n, :n] = h
    kkt[:n, n:] = aw.T
    kkt[n:, :n] = aw
    rhs = np.concatenate([-g, np.zeros(nw) if rw is None else rw])
    sol = _refined_solve(kkt, rhs, refine)
    return sol[:n], sol[n:]


def solve_qp(prob: QpProblem, z0: np.ndarray | None = None,
             working_set: tuple = (), max_iter: int | None = None,
             screen: bool = True, pool_hint=()) -> QpSolution:
    """Primal active-set solve from a feasible (or phase-1) start.

    `working_set` seeds the working set with rows active in a previous,
    similar problem; `pool_hint` rows always enter the screening pool.
    Screening never changes the answer: the full row set is re-certified
    before optimality is declared, and any violated rows join the pool.
    """
    prob.validate()
    h = np.asarray(prob.h, dtype=float)
    f = np.asarray(prob.f, dtype=float)
    n = f.size
    rows, b = _stacked_rows(prob)
    m = rows.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m)

    if m == 0:
        z = _refined_solve(h, -f)
        g = h @ z + f
        return QpSolution(z=z, active_set=[], kkt_residual=float(np.max(np.abs(g))),
                          status="optimal", iterations=0, multipliers=np.zeros(0))

    feas_tol = 1e-9 * max(1.0, float(np.max(np.abs(b))))
    z = None
    if z0 is not None:
        z0 = np.asarray(z0, dtype=float)
        if z0.size == n and np.max(rows @ z0 - b) <= feas_tol:
            z = z0.copy()
    if z is None:
        z = _phase1(rows, b, n)
        if z is None:
            return QpSolution(z=np.zeros(n), status="infeasible")

    if screen:
        slack = b - rows @ z
        pool = np.where(slack <= 2e-2 * (1.0 + np.abs(b)))[0]
        extra = [i for i in (*working_set, *pool_hint) if 0 <= i < m]
        pool = np.union1d(pool, np.asarray(extra, dtype=int)).astype(int)
    else:
        pool = np.arange(m)

    # a stale warm working set is adopted wholesale; the inner loop pulls
    # the iterate onto (or drops) those rows as the multipliers dictate
    seed = sorted({int(i) for i in working_set if 0 <= i < m})
    w = list(seed[: len(f) - 1])
    pool = np.union1d(pool, np.asarray(w, dtype=int)).astype(int)
    z_anchor = z.copy()   # always feasible for the full row set
    total_iters = 0
    lam = np.zeros(0)
    for _outer in range(60):
        z, w, lam, iters, converged = _active_set(
            h, f, rows, b, pool, z, w, max_iter - total_iters)
        total_iters += iters
        if not converged:
            return _rescue(h, f, rows, b, z_anchor, z, w, lam, total_iters)
        viol = np.where(rows @ z - b > feas_tol)[0]
        if viol.size == 0:
            return _finish(h, f, rows, b, z, w, lam, total_iters, "optimal")
        pool = np.union1d(pool, viol).astype(int)
        # ray-projection restoration: walk from the feasible anchor toward
        # z until the first newly discovered row becomes active
        direction = z - z_anchor
        denom = rows @ direction
        slack_anchor = b - rows @ z_anchor
        blocking = denom > 1e-13
        t = 1.0
        if np.any(blocking):
            t = min(1.0, float(np.min(slack_anchor[blocking] / denom[blocking])))
        z = z_anchor + max(t, 0.0) * direction
    return _rescue(h, f, rows, b, z_anchor, z, w, lam, total_iters)


def _independent_near_active(rows, b, z, tol) -> list:
    """Greedy independent subset of the rows grazed at z (lowest index first)."""
    near = np.where(np.abs(b - rows @ z) <= tol)[0]
    picked: list = []
    if near.size == 0:
        return picked
    n = rows.shape[1]
    resid = rows[near].copy()
    for j in range(near.size):
        if len(picked) >= n - 1:
            break
        r = resid[j]
        nrm = float(np.linalg.norm(r))
        if nrm <= 1e-8 * (1.0 + float(np.max(np.abs(rows[near[j]])))):
            continue
        q = r / nrm
        picked.append(int(near[j]))
        resid = resid - np.outer(resid @ q, q)
    return picked


def _rescue(h, f, rows, b, z_anchor, z, w, lam, iters):
    """Budget exhausted: certify the interior-point backup's answer.

    Exact vertex identification is the very thing these degenerate
    instances resist, but certification does not need it: the tightened
    interior-point solution already satisfies the scale-relative KKT
    conditions, optionally after refitting the duals (nonnegative least
    squares on the near-active columns).  The status stays honest: it is
    only "optimal" if the measured residual clears the contract.
    """
    lam_prev = np.zeros(rows.shape[0])
    for j, gi in enumerate(w):
        if j < lam.size:
            lam_prev[gi] = lam[j]
    candidates = [_finish_full(h, f, rows, b, z, lam_prev, iters, "")]

    z_ip, lam_ip = _interior_point_fallback(h, f, rows, b)
    if z_ip is not None:
        if lam_ip is None:
            lam_ip = np.zeros(rows.shape[0])
        lam_ip = np.maximum(lam_ip, 0.0)
        candidates.append(_finish_full(h, f, rows, b, z_ip, lam_ip, iters, ""))

        # dual refit at the frozen primal point
        from scipy.optimize import nnls
        resid_ip = rows @ z_ip - b
        near = np.where(resid_ip > -1e-4 * (1.0 + np.abs(b)))[0]
        lam_fit = None
        if near.size:
            g = h @ z_ip + f
            try:
                lam_n, _ = nnls(rows[near].T, -g)
                lam_fit = np.zeros(rows.shape[0])
                lam_fit[near] = lam_n
                candidates.append(_finish_full(h, f, rows, b, z_ip, lam_fit, iters, ""))
            except RuntimeError:
                pass

        # complementarity nudge: pull the worst lambda*slack rows most of
        # the way onto their bounds through a well-conditioned subset
        lam_use = lam_fit if lam_fit is not None else lam_ip
        g_scale = 1.0 + float(np.max(np.abs(h @ z_ip + f)))
        z_try = z_ip.copy()
        for _ in range(3):
            prod = lam_use * np.abs(rows @ z_try - b)
            bad = np.where(prod > 0.2e-6 * g_scale)[0]
            if bad.size == 0:
                break
            order = bad[np.argsort(-prod[bad], kind="stable")]
            subset: list = []
            basis = np.zeros((z_try.size, 0))
            for gi in order:
                r = rows[gi] - basis @ (basis.T @ rows[gi])
                nrm = float(np.linalg.norm(r))
                if nrm <= 1e-2 * (1.0 + float(np.linalg.norm(rows[gi]))):
                    continue
                basis = np.hstack([basis, (r / nrm)[:, None]])
                subset.append(int(gi))
            if not subset:
                break
            a_s = rows[subset]
            gap = (b[subset] - a_s @ z_try) * 0.95
            delta = a_s.T @ np.linalg.lstsq(a_s @ a_s.T, gap, rcond=None)[0]
            z_try = z_try + delta
        if not np.array_equal(z_try, z_ip):
            candidates.append(_finish_full(h, f, rows, b, z_try, lam_use, iters, ""))

        # restart the exact search from the (restored-feasible) backup
        # answer: the identification walk from a near-optimal point is short
        feas_tol = 1e-9 * max(1.0, float(np.max(np.abs(b))))
        z_re = z_ip.copy()
        if np.max(rows @ z_re - b) > feas_tol:
            direction = z_re - z_anchor
            denom = rows @ direction
            slack_anchor = b - rows @ z_anchor
            blocking = denom > 1e-13
            t = 1.0
            if np.any(blocking):
                t = min(1.0, float(np.min(slack_anchor[blocking] / denom[blocking])))
            z_re = z_anchor + max(t, 0.0) * direction
        z3, w3, lam3, it3, conv3 = _active_set(
            h, f, rows, b, np.arange(rows.shape[0]), z_re, [], 400)
        if conv3 and np.max(rows @ z3 - b) <= feas_tol:
            candidates.append(_finish(h, f, rows, b, z3, w3, lam3, iters + it3, ""))

    out = min(candidates, key=lambda s: s.kkt_residual)
    out.status = "optimal" if out.kkt_residual <= 1e-6 else "max_iterations"
    out.iterations = iters
    return out


def _finish_full(h, f, rows, b, z, lam_full, iters, status):
    """Like _finish, but with an explicit full multiplier vector."""
    g = h @ z + f
    g_scale = 1.0 + float(np.max(np.abs(g)))
    m = rows.shape[0]
    stationarity = float(np.max(np.abs(g + rows.T @ lam_full))) / g_scale
    if m:
        resid = rows @ z - b
        primal = float(max(0.0, np.max(resid))) / (1.0 + float(np.max(np.abs(b))))
        comp = float(np.max(np.abs(lam_full * resid))) / g_scale
        dual = float(max(0.0, -np.min(lam_full))) / g_scale
    else:
        primal = comp = dual = 0.0
    lam_floor = 1e-8 * (1.0 + float(np.max(lam_full, initial=0.0)))
    active = [int(i) for i in np.where(lam_full > lam_floor)[0]]
    return QpSolution(z=z.copy(), active_set=active,
                      kkt_residual=max(stationarity, primal, comp, dual),
                      status=status, iterations=iters, multipliers=lam_full)


def _active_set(h, f, rows, b, pool, z, w, budget):
    """Inner primal active-set loop over the pooled rows.

    Tolerates a working set the iterate is not yet sitting on (stale warm
    sets): each EQP step aims at the minimizer ON the working-set manifold
    and is cut short by the nearest blocking row.  The working set is kept
    linearly independent; when the iterate wedges against a degenerate
    constraint family (blocking at zero step length), a maximal
    independent subset of all grazing rows is activated in one sweep.
    """
    pool_list = pool.tolist()
    a_pool = rows[pool]
    b_pool = b[pool]
    pos = {gi: k for k, gi in enumerate(pool_list)}
    lam = np.zeros(0)
    iters = 0
    n = z.size
    g = h @ z + f
    slack = b_pool - a_pool @ z
    mask = np.ones(len(pool_list), dtype=bool)
    for gi in w:
        k = pos.get(gi)
        if k is not None:
            mask[k] = False

    banned: set = set()
    seeded = bool(w)
    # orthonormal basis of span(A_w'): independence checks become one
    # projection instead of a least-squares solve
    q_basis = np.zeros((n, 0))

    def rebuild_basis():
        nonlocal q_basis
        if w:
            q_basis = np.linalg.qr(rows[w].T)[0]
        else:
            q_basis = np.zeros((n, 0))

    def ortho_part(row):
        if q_basis.shape[1] == 0:
            return row.copy()
        return row - q_basis @ (q_basis.T @ row)

    def independent(candidate_row):
        """Does the row add rank to the working set?"""
        r = ortho_part(candidate_row)
        return float(np.max(np.abs(r))) > 1e-8 * (1.0 + float(np.max(np.abs(candidate_row))))

    def add_row(gi):
        nonlocal q_basis
        r = ortho_part(rows[gi])
        nrm = float(np.linalg.norm(r))
        if nrm > 0:
            q_basis = np.hstack([q_basis, (r / nrm)[:, None]])
        w.append(gi)
        w.sort()
        k = pos.get(gi)
        if k is not None:
            mask[k] = False

    def drop_from(w, lam, g, bland):
        lam_tol = 1e-8 * (1.0 + float(np.max(np.abs(g))))
        if np.min(lam) >= -lam_tol:
            return w, True
        drop = int(np.argmin(lam))
        if bland:
            # Bland-style pivot, engaged only when the most-negative rule
            # is suspected of cycling on a degenerate face
            for j in range(len(w)):   # w is sorted by row index
                if lam[j] < -lam_tol:
                    drop = j
                    break
        k = pos.get(w[drop])
        if k is not None:
            mask[k] = True
        banned.add(w[drop])   # no immediate re-add: breaks degenerate cycles
        del w[drop]
        rebuild_basis()
        return w, False

    if seeded:
        rebuild_basis()
    trace = getattr(_active_set, "trace", None)
    stalled = 0
    drops_without_progress = 0
    full_step = False
    while iters < budget:
        iters += 1
        aw = rows[w] if w else np.zeros((0, n))
        rw = b[w] - aw @ z if w else None
        p, lam = _kkt_solve(h, g, aw, rw, refine=False)
        small = np.max(np.abs(p)) <= 1e-9 * (1.0 + np.max(np.abs(z)))
        # a saturated working set or a long streak without confirmation
        # forces an exact multiplier check (breaks numerical wedging)
        if small or full_step or stalled >= 3 or len(w) >= n - 1 or iters % 16 == 0:
            full_step = False
            # confirm with a refined solve before concluding anything
            g = h @ z + f
            rw = b[w] - rows[w] @ z if w else None
            p, lam = _kkt_solve(h, g, aw, rw, refine=True)
            if np.max(np.abs(p)) <= 1e-9 * (1.0 + np.max(np.abs(z))):
                # apply the last Newton correction: it polishes the iterate
                # to machine precision, which the KKT report needs
                z = z + p
                g = h @ z + f
                slack = slack - a_pool @ p
                if lam.size == 0:
                    return z, w, lam, iters, True
                rw = b[w] - rows[w] @ z
                p, lam = _kkt_solve(h, g, aw, rw, refine=True)
                w, done = drop_from(w, lam, g, bland=drops_without_progress > 8)
                if done:
                    return z, w, lam, iters, True
                drops_without_progress += 1
                stalled = 0
                continue
        if stalled >= 60:
            # persistently wedged: let the caller's rescue path take over
            return z, w, lam, iters, False
        # step toward the manifold minimizer, cut by the nearest blocking
        # row; every blocking row bounds the step, but only one that
        # genuinely adds rank may enter the working set
        denom = a_pool @ p
        denom_tol = 1e-10 * max(1.0, float(np.max(np.abs(denom), initial=0.0)))
        blocking = mask & (denom > denom_tol)
        alpha = 1.0
        block_row = -1
        exchange = None
        if np.any(blocking):
            ratios = np.full(len(pool_list), np.inf)
            ratios[blocking] = np.maximum(slack[blocking], 0.0) / denom[blocking]
            amin = float(np.min(ratios))
            if amin < 1.0:
                alpha = amin
                tie = np.where(ratios <= amin + 1e-12 * (1.0 + amin))[0]
                for k in tie:
                    gi = int(pool_list[int(k)])
                    if gi in banned:
                        continue
                    if len(w) < n - 1 and independent(rows[gi]):
                        block_row = gi
                        break
                    banned.add(gi)
                if block_row < 0 and alpha <= 1e-13 and w:
                    # degenerate wedge: swap the blocking row in for the
                    # working-set row it leans on hardest (banned rows may
                    # not come straight back in)
                    for k in tie:
                        gi = int(pool_list[int(k)])
                        if gi in banned or gi in w:
                            continue
                        coef = np.linalg.lstsq(rows[w].T, rows[gi], rcond=None)[0]
                        j = int(np.argmax(np.abs(coef)))
                        if abs(coef[j]) > 1e-6:
                            exchange = (j, gi)
                        break
        if trace is not None:
            trace(iters=iters, w=len(w), alpha=alpha, block=block_row,
                  pmax=float(np.max(np.abs(p))), small=small,
                  full_step=full_step, stalled=stalled, exch=exchange)
        if alpha <= 1e-13:
            stalled += 1
        else:
            stalled = 0
        if alpha > 1e-6:   # only genuine progress lifts the re-add bans
            banned.clear()
            drops_without_progress = 0
        z = z + alpha * p
        g = g + alpha * (h @ p)
        slack = slack - alpha * denom
        if exchange is not None:
            j, gi = exchange
            k_old = pos.get(w[j])
            if k_old is not None:
                mask[k_old] = True
            banned.add(w[j])   # outgoing row may not bounce straight back
            del w[j]
            rebuild_basis()
            banned.discard(gi)
            add_row(gi)
            continue
        if block_row >= 0:
            add_row(block_row)
            if alpha <= 1e-13:
                # wedged on a degenerate face: activate its whole
                # independent extent at once instead of creeping
                grazing = np.where(mask & (slack <= 1e-9 * (1.0 + np.abs(b_pool)))
                                   & (denom > denom_tol))[0]
                if grazing.size:
                    cand_rows = a_pool[grazing]
                    resid = cand_rows - (cand_rows @ q_basis) @ q_basis.T
                    scale = 1.0 + np.max(np.abs(cand_rows), axis=1)
                    for j in np.argsort(grazing, kind="stable"):
                        if len(w) >= n - 1:
                            break
                        gi = int(pool_list[int(grazing[j])])
                        if gi in banned or not mask[grazing[j]]:
                            continue
                        r = resid[j]
                        if np.max(np.abs(r)) <= 1e-8 * scale[j]:
                            continue
                        nrm = float(np.linalg.norm(r))
                        q_new = r / nrm
                        q_basis = np.hstack([q_basis, q_new[:, None]])
                        w.append(gi)
                        mask[grazing[j]] = False
                        resid = resid - np.outer(resid @ q_new, q_new)
                    w.sort()
        # an uncut step lands on the working-set minimizer: test it next
        full_step = alpha >= 1.0 and block_row < 0
    return z, w, lam, iters, False


def _finish(h, f, rows, b, z, w, lam, iters, status):
    """Scale-relative KKT residuals: each component is normalized by the
    magnitude of the quantities entering it, which is the only certificate
    float64 can honour when the Hessian spans many orders of magnitude."""
    m = rows.shape[0]
    lam_full = np.zeros(m)
    for j, gi in enumerate(w):
        if j < lam.size:
            lam_full[gi] = lam[j]
    g = h @ z + f
    # rows are O(1) after problem scaling, so multipliers live on the
    # gradient's scale; normalizing every component by it matches the
    # working-set tolerances
    g_scale = 1.0 + float(np.max(np.abs(g)))
    stationarity = float(np.max(np.abs(g + rows.T @ lam_full))) / g_scale
    if m:
        resid = rows @ z - b
        primal = float(max(0.0, np.max(resid))) / (1.0 + float(np.max(np.abs(b))))
        comp = float(np.max(np.abs(lam_full * resid))) / g_scale
        dual = float(max(0.0, -np.min(lam_full))) / g_scale
    else:
        primal = comp = dual = 0.0
    return QpSolution(z=z, active_set=sorted(w),
                      kkt_residual=max(stationarity, primal, comp, dual),
                      status=status, iterations=iters, multipliers=lam_full)


class QpSolver:
    """Carries warm-start memory between successive similar problems.

    One instance per controller; instances are independent and safe to run
    in parallel with each other.
    """

    def __init__(self, pool_hint=()):
        self._active: tuple = ()
        self._z: np.ndarray | None = None
        self.pool_hint = tuple(pool_hint)

    def solve(self, prob: QpProblem, z0: np.ndarray | None = None) -> QpSolution:
        start = z0 if z0 is not None else self._z
        sol = solve_qp(prob, z0=start, working_set=self._active,
                       pool_hint=self.pool_hint)
        if sol.status == "optimal":
            self._active = tuple(sol.active_set)
            self._z = sol.z.copy()
        return sol

    def reset(self):
        self._active = ()
        self._z = None
