"""Rest-to-rest point-to-point trajectory optimization by direct collocation.

States (q, qdot) and acceleration inputs u live on N+1 grid points of a
free-duration trajectory; trapezoidal defects tie them together and the
cost is t_F + (h/2) * sum_k u_k^T R u_k.  With the double-integrator
substitution the defects are linear for fixed t_F and R is diagonal, so
the problem splits into one small convex QP per joint; the remaining
scalar variable t_F is solved by root-finding the exact derivative of
the reduced objective g(t_F) = t_F + sum_j E_j(t_F), obtained from the
QP multipliers (envelope theorem).  First-order optimality therefore
splits into the inner QP's KKT residual plus a projected residual in
t_F, where the lower end of the t_F interval is the larger of the box
bound and the feasibility boundary (below the minimum feasible duration
the constraint polytope is empty and no KKT point exists).

The independent validator re-derives every defect, bound and boundary
residual with plain loops, sharing no code with the solver.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers

from .geometry import RobotGeometry

logger = logging.getLogger(__name__)

_QP_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-10,
    "reltol": 1e-10,
    "feastol": 1e-9,
    "maxiters": 200,
}

T_F_BOUNDS = (0.1, 30.0)
DEFAULT_U_MAX = 2.0          # rad/s^2, acceleration box replacing torque limits
DEFAULT_R_DIAG = 0.1


@dataclass
class TrajProblem:
    """Rest-to-rest PTP instance: boundary configurations and limits."""

    geom: RobotGeometry
    q0: np.ndarray
    q_target: np.ndarray
    N: int = 50
    r_diag: np.ndarray = field(default=None)
    u_max: np.ndarray = field(default=None)

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).reshape(7)
        self.q_target = np.asarray(self.q_target, dtype=float).reshape(7)
        if self.N < 2:
            raise ValueError("need at least 2 grid intervals")
        self.r_diag = (np.full(7, DEFAULT_R_DIAG) if self.r_diag is None
                       else np.asarray(self.r_diag, dtype=float).reshape(7))
        self.u_max = (np.full(7, DEFAULT_U_MAX) if self.u_max is None
                      else np.asarray(self.u_max, dtype=float).reshape(7))
        if np.any(self.r_diag <= 0) or np.any(self.u_max <= 0):
            raise ValueError("input weights and acceleration bounds must be positive")
        if not (self.geom.within_limits(self.q0) and self.geom.within_limits(self.q_target)):
            raise ValueError("boundary configurations violate joint limits")


@dataclass
class SolveReport:
    iterations: int
    max_defect: float
    max_bound_violation: float
    max_boundary_violation: float
    stationarity: float
    converged: bool
    at_lower_edge: bool = False   # t_F pinned by box bound or feasibility boundary
    message: str = ""


@dataclass
class Trajectory:
    t_final: float
    x: np.ndarray        # (N+1, 14): columns 0..6 positions, 7..13 velocities
    u: np.ndarray        # (N+1, 7)
    cost: float
    report: SolveReport


def min_time_estimate(dq: float, v_max: float, a_max: float) -> float:
    """Minimum rest-to-rest duration of a clipped velocity profile."""
    d = abs(dq)
    if d < 1e-15:
        return 0.0
    if d < v_max * v_max / a_max:
        return 2.0 * np.sqrt(d / a_max)
    return d / v_max + v_max / a_max


_BASIS_CACHE = {}


def _collocation_basis(N: int):
    """Trapezoid cumulation matrix C (v = h C u) and C^2 (q-q0 = h^2 C^2 u)."""
    if N not in _BASIS_CACHE:
        C = np.zeros((N + 1, N + 1))
        for k in range(1, N + 1):
            C[k, 0] = 0.5
            C[k, 1:k] = 1.0
            C[k, k] = 0.5
        _BASIS_CACHE[N] = (C, C @ C)
    return _BASIS_CACHE[N]


class _JointQP:
    """Structure of the fixed-duration subproblem of one joint."""

    def __init__(self, N: int, q0_j, dq_j, q_lim, v_lim, u_lim, r_j):
        C, C2 = _collocation_basis(N)
        self.N = N
        self.dq = dq_j
        self.r = r_j
        self.v_lim, self.u_lim = v_lim, u_lim
        self.q_hi = q_lim - q0_j      # (q - q0) upper margin
        self.q_lo = q_lim + q0_j      # lower margin
        self.C, self.C2 = C, C2
        eye = np.eye(N + 1)
        self.G = matrix(np.vstack([eye, -eye, C[1:N], -C[1:N], C2[1:N], -C2[1:N]]))
        self.A = matrix(np.vstack([C[N], C2[N]]))
        self.n_u = N + 1
        self.n_v = N - 1

    def rhs(self, h: float):
        b = matrix(np.array([0.0, self.dq / h**2]))
        hv = np.concatenate([
            np.full(2 * self.n_u, self.u_lim),
            np.full(2 * self.n_v, self.v_lim / h),
            np.full(self.n_v, self.q_hi / h**2),
            np.full(self.n_v, self.q_lo / h**2),
        ])
        return matrix(hv), b

    def solve(self, h: float):
        """Returns (u, energy, dLdt, kkt_x_residual) or None when infeasible."""
        P = matrix(h * self.r * np.eye(self.n_u))
        q_lin = matrix(np.zeros(self.n_u))
        hv, b = self.rhs(h)
        try:
            sol = solvers.qp(P, q_lin, self.G, hv, self.A, b, options=_QP_OPTIONS)
        except (ValueError, ZeroDivisionError, ArithmeticError):
            return None
        if sol["status"] != "optimal":
            return None
        u = np.array(sol["x"]).ravel()
        y = np.array(sol["y"]).ravel()
        z = np.array(sol["z"]).ravel()
        energy = 0.5 * h * self.r * float(u @ u)

        # envelope terms: d/dt of the joint Lagrangian at the optimum,
        # via the explicit h(t)-dependence of the rhs vectors (h = t/N)
        N = self.N
        dLdt = self.r * float(u @ u) / (2.0 * N)
        dLdt += y[1] * 2.0 * self.dq / (N * h**3)
        zv = z[2 * self.n_u: 2 * self.n_u + 2 * self.n_v]
        dLdt += float(zv.sum()) * self.v_lim / (N * h**2)
        zq_hi = z[2 * self.n_u + 2 * self.n_v: 2 * self.n_u + 3 * self.n_v]
        zq_lo = z[2 * self.n_u + 3 * self.n_v:]
        dLdt += float(zq_hi.sum()) * 2.0 * self.q_hi / (N * h**3)
        dLdt += float(zq_lo.sum()) * 2.0 * self.q_lo / (N * h**3)

        Gn = np.array(self.G)
        An = np.array(self.A)
        kkt = np.abs(h * self.r * u + An.T @ y + Gn.T @ z).max()
        return u, energy, dLdt, kkt


class _TimeSearch:
    """Evaluates the reduced problem at candidate durations."""

    def __init__(self, problem: TrajProblem):
        g = problem.geom
        dq = problem.q_target - problem.q0
        self.joints = [
            _JointQP(problem.N, problem.q0[j], dq[j], g.q_max[j], g.qd_max[j],
                     problem.u_max[j], problem.r_diag[j])
            for j in range(7)
        ]
        self.N = problem.N
        self.evals = 0

    def __call__(self, t: float):
        """None if infeasible, else (gprime, cost, u (N+1,7), kkt_residual)."""
        self.evals += 1
        h = t / self.N
        us, energy, dLdt, kkt = [], 0.0, 1.0, 0.0
        for jqp in self.joints:
            out = jqp.solve(h)
            if out is None:
                return None
            u, e, dl, k = out
            us.append(u)
            energy += e
            dLdt += dl
            kkt = max(kkt, k)
        return dLdt, t + energy, np.stack(us, axis=1), kkt


def assemble_and_solve(problem: TrajProblem, tol: float = 1e-6,
                       max_iters: int = 100) -> Trajectory:
    """Solve the PTP instance; the returned report carries the residuals.

    Contract on success: recomputed trapezoidal defects <= tol, all
    bounds within tol, boundary conditions within tol, and the
    first-order stationarity residual (inner KKT plus projected t_F
    derivative) <= 10 * tol.  Failure to locate a feasible or stationary
    duration within max_iters outer evaluations yields converged=False.
    """
    t_lb, t_ub = T_F_BOUNDS
    search = _TimeSearch(problem)
    dq = problem.q_target - problem.q0
    t_min = max(
        min_time_estimate(dq[j], problem.geom.qd_max[j], problem.u_max[j])
        for j in range(7)
    )
    t_init = float(np.clip(1.5 * t_min if t_min > 0 else t_lb, t_lb, t_ub))

    def fail(msg):
        logger.warning("PTP solve failed: %s", msg)
        report = SolveReport(iterations=search.evals, max_defect=np.inf,
                             max_bound_violation=np.inf, max_boundary_violation=np.inf,
                             stationarity=np.inf, converged=False, message=msg)
        return Trajectory(t_final=np.nan, x=np.zeros((problem.N + 1, 14)),
                          u=np.zeros((problem.N + 1, 7)), cost=np.inf, report=report)

    # 1. find a feasible duration
    t_a = t_init
    res_a = search(t_a)
    while res_a is None:
        if t_a >= t_ub:
            return fail("no feasible duration up to the upper bound")
        t_a = min(t_ub, 1.7 * t_a)
        res_a = search(t_a)
        if search.evals > max_iters:
            return fail("iteration cap during feasibility search")

    at_edge = False
    # 2. bracket a sign change of g'(t) (or hit an edge of the t-interval)
    if res_a[0] < 0.0:
        lo, res_lo = t_a, res_a
        hi, res_hi = None, None
        while True:
            if lo >= t_ub:
                t_star, res_star, at_edge = t_ub, res_lo, True
                break
            t_next = min(t_ub, 1.7 * lo)
            res_next = search(t_next)
            if search.evals > max_iters:
                return fail("iteration cap during upward bracketing")
            if res_next is None:
                return fail("interior infeasibility during upward bracketing")
            if res_next[0] > 0.0:
                hi, res_hi = t_next, res_next
                break
            lo, res_lo = t_next, res_next
    else:
        hi, res_hi = t_a, res_a
        lo, res_lo = None, None
        t_cur = t_a
        while True:
            if t_cur <= t_lb:
                t_star, res_star, at_edge = t_lb, res_hi, True
                break
            t_next = max(t_lb, 0.75 * t_cur)
            res_next = search(t_next)
            if search.evals > max_iters:
                return fail("iteration cap during downward bracketing")
            if res_next is None:
                # feasibility boundary inside (t_next, hi]: shrink onto it
                lo_inf, hi_feas, res_feas = t_next, hi, res_hi
                while hi_feas - lo_inf > max(1e-9, 1e-9 * hi_feas):
                    mid = 0.5 * (lo_inf + hi_feas)
                    res_mid = search(mid)
                    if search.evals > max_iters:
                        break
                    if res_mid is None:
                        lo_inf = mid
                    elif res_mid[0] < 0.0:
                        lo, res_lo = mid, res_mid
                        break
                    else:
                        hi_feas, res_feas = mid, res_mid
                if lo is None:
                    t_star, res_star, at_edge = hi_feas, res_feas, True
                break
            if res_next[0] < 0.0:
                lo, res_lo = t_next, res_next
                break
            hi, res_hi = t_next, res_next
            t_cur = t_next
        if lo is None and not at_edge:
            t_star, res_star, at_edge = t_lb, res_hi, True

    # 3. root-find g' on the bracket (secant with bisection safeguard)
    stat_tol = 10.0 * tol
    if not at_edge:
        gp_lo, gp_hi = res_lo[0], res_hi[0]
        t_star, res_star = (lo, res_lo) if abs(gp_lo) < abs(gp_hi) else (hi, res_hi)
        while search.evals <= max_iters:
            if abs(res_star[0]) <= 0.5 * stat_tol:
                break
            if hi - lo <= 1e-10 * max(1.0, hi):
                # derivative jump straddling zero: kink optimum, first-order
                # optimal in the subdifferential sense
                t_star, res_star = hi, res_hi
                res_star = (0.0,) + res_star[1:]
                break
            t_sec = lo - gp_lo * (hi - lo) / (gp_hi - gp_lo)
            if not (lo + 0.1 * (hi - lo) < t_sec < hi - 0.1 * (hi - lo)):
                t_sec = 0.5 * (lo + hi)
            res_sec = search(t_sec)
            if res_sec is None:
                return fail("interior infeasibility during root refinement")
            if abs(res_sec[0]) < abs(res_star[0]):
                t_star, res_star = t_sec, res_sec
            if res_sec[0] < 0.0:
                lo, gp_lo, res_lo = t_sec, res_sec[0], res_sec
            else:
                hi, gp_hi, res_hi = t_sec, res_sec[0], res_sec

    gprime, cost, u, kkt = res_star
    # projected t-residual: interior => |g'|; at the lower edge (box bound
    # or feasibility boundary) g' >= 0 is optimal; at the upper box bound
    # g' <= 0 is optimal
    if at_edge:
        t_res = max(0.0, -gprime) if t_star < t_ub else max(0.0, gprime)
    else:
        t_res = abs(gprime)
    stationarity = max(t_res, kkt)

    traj = _assemble(problem, t_star, u)
    rep = validate_trajectory(problem, traj)
    converged = (
        rep["max_defect"] <= tol
        and rep["max_bound_violation"] <= tol
        and rep["max_boundary_violation"] <= tol
        and stationarity <= stat_tol
        and search.evals <= max_iters
    )
    traj.report = SolveReport(
        iterations=search.evals,
        max_defect=rep["max_defect"],
        max_bound_violation=rep["max_bound_violation"],
        max_boundary_violation=rep["max_boundary_violation"],
        stationarity=stationarity,
        converged=converged,
        at_lower_edge=at_edge and t_star < t_ub,
        message="" if converged else "residuals above tolerance",
    )
    return traj


def _assemble(problem: TrajProblem, t: float, u: np.ndarray) -> Trajectory:
    N = problem.N
    C, _ = _collocation_basis(N)
    h = t / N
    v = h * (C @ u)
    pos = problem.q0 + h * (C @ v)
    x = np.hstack([pos, v])
    x[0, :7] = problem.q0
    x[0, 7:] = 0.0
    energy = 0.5 * h * float(np.sum(u * u * problem.r_diag))
    return Trajectory(t_final=t, x=x, u=u, cost=t + energy, report=None)


def validate_trajectory(problem: TrajProblem, traj: Trajectory) -> dict:
    """Recompute defects, bounds and boundary residuals with plain loops.

    Deliberately shares no code with the solver (duplicate
    implementation); returns the max violation of each group.
    """
    N = problem.N
    h = traj.t_final / N
    q = traj.x[:, :7]
    v = traj.x[:, 7:]
    u = traj.u

    max_defect = 0.0
    for k in range(N):
        for j in range(7):
            dq = q[k + 1, j] - q[k, j] - 0.5 * h * (v[k + 1, j] + v[k, j])
            dv = v[k + 1, j] - v[k, j] - 0.5 * h * (u[k + 1, j] + u[k, j])
            max_defect = max(max_defect, abs(dq), abs(dv))

    max_bound = 0.0
    for k in range(N + 1):
        for j in range(7):
            max_bound = max(
                max_bound,
                abs(q[k, j]) - problem.geom.q_max[j],
                abs(v[k, j]) - problem.geom.qd_max[j],
                abs(u[k, j]) - problem.u_max[j],
            )
    max_bound = max(max_bound, 0.0)

    max_boundary = 0.0
    for j in range(7):
        max_boundary = max(
            max_boundary,
            abs(q[0, j] - problem.q0[j]),
            abs(q[N, j] - problem.q_target[j]),
            abs(v[0, j]),
            abs(v[N, j]),
        )
    return {
        "max_defect": max_defect,
        "max_bound_violation": max_bound,
        "max_boundary_violation": max_boundary,
    }


def export_csv(traj: Trajectory, path):
    N = traj.u.shape[0] - 1
    h = traj.t_final / N
    cols = (["k", "t"] + [f"q{j+1}" for j in range(7)]
            + [f"qd{j+1}" for j in range(7)] + [f"u{j+1}" for j in range(7)])
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for k in range(N + 1):
            row = [k, k * h] + list(traj.x[k]) + list(traj.u[k])
            f.write(",".join(f"{v}" for v in row) + "\n")


def report_dict(traj: Trajectory) -> dict:
    r = traj.report
    return {
        "t_final": traj.t_final,
        "cost": traj.cost,
        "converged": r.converged,
        "iterations": r.iterations,
        "max_defect": r.max_defect,
        "max_bound_violation": r.max_bound_violation,
        "max_boundary_violation": r.max_boundary_violation,
        "stationarity": r.stationarity,
        "at_lower_edge": r.at_lower_edge,
    }
