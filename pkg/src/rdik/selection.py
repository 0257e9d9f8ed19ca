"""Optimal target-configuration selection among redundant IK solutions.

Candidates are scored by manipulability (closed form) and closeness to
the current configuration; the optimum over the 8 branch combinations
and a discretized arm-angle grid is found either exhaustively (the label
generator / ground truth) or restricted to a predicted (branch, bin)
cell with ceil(n_phi / n_b) grid points.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .analytic_ik import RedundancyParams, aik_branch_grid, aik_grid, flags_from_class
from .geometry import RobotGeometry
from .kinematics import Pose, manipulability_analytic

logger = logging.getLogger(__name__)

# Candidates with manipulability below this floor cost +inf (keeps the
# 1/m term from promoting numerically near-singular winners).
M_FLOOR = 1e-6


class NoFeasibleTargetError(RuntimeError):
    """Every candidate cell is infeasible (limits/degeneracy)."""


@dataclass(frozen=True)
class SelectionWeights:
    omega_m: float = 0.05
    omega_c: float = 1.0

    def __post_init__(self):
        if self.omega_m <= 0 or self.omega_c <= 0:
            raise ValueError("selection weights must be strictly positive")


@dataclass
class SelectionResult:
    q_star: np.ndarray
    params_star: RedundancyParams
    cost: float
    feasible_count: int
    evaluations: int
    fallback_level: int = 0   # 0 = primary guided attempt / exhaustive


@dataclass
class CostMap:
    """Cost over the full 8 x n_phi grid; +inf marks infeasible cells."""

    grid: np.ndarray
    phis: np.ndarray = field(repr=False)

    def to_csv(self, path):
        np.savetxt(path, self.grid, delimiter=",")


def closeness(q0, q) -> float:
    """Largest joint-space deviation (L-infinity norm of q0 - q)."""
    return float(np.max(np.abs(np.asarray(q0, float) - np.asarray(q, float)), axis=-1))


def ik_cost(geom: RobotGeometry, w: SelectionWeights, q0, q) -> float:
    """omega_m / m(q) + omega_c * closeness(q0, q); +inf below the m floor."""
    m = float(manipulability_analytic(geom, q))
    if m < M_FLOOR:
        return float("inf")
    return w.omega_m / m + w.omega_c * closeness(q0, q)


def phi_grid(n_phi: int) -> np.ndarray:
    """Arm-angle grid {j * 2pi/n_phi, j = 1..n_phi}, wrapped to [0, 2pi)."""
    if n_phi < 1:
        raise ValueError("n_phi must be >= 1")
    return (np.arange(1, n_phi + 1) * (2.0 * np.pi / n_phi)) % (2.0 * np.pi)


def _grid_costs(geom, w, q0, q, degenerate):
    """Vectorized cost over candidate configurations q (..., 7)."""
    m = manipulability_analytic(geom, q)
    close = np.max(np.abs(q0 - q), axis=-1)
    with np.errstate(divide="ignore"):
        cost = w.omega_m / m + w.omega_c * close
    infeasible = (
        degenerate
        | (m < M_FLOOR)
        | np.any(np.abs(q) > geom.q_max, axis=-1)
    )
    cost[infeasible] = np.inf
    return cost


def exhaustive_select(geom: RobotGeometry, w: SelectionWeights, q0, target: Pose,
                      n_phi: int):
    """Global optimum over all 8 * n_phi cells.

    Returns (SelectionResult, CostMap).  Ties break deterministically to
    the lowest branch class, then the lowest grid index, so the result
    is independent of any evaluation order.
    """
    q0 = np.asarray(q0, dtype=float)
    phis = phi_grid(n_phi)
    grid = aik_grid(geom, target, phis)
    cost = _grid_costs(geom, w, q0, grid.q, grid.degenerate)
    cmap = CostMap(grid=cost, phis=phis)
    flat = int(np.argmin(cost.ravel()))   # first minimum = deterministic tie-break
    best = cost.ravel()[flat]
    if not np.isfinite(best):
        raise NoFeasibleTargetError("no feasible IK candidate on the grid")
    cls, j = divmod(flat, n_phi)
    j_s, j_e, j_w = flags_from_class(cls)
    result = SelectionResult(
        q_star=grid.q[cls, j].copy(),
        params_star=RedundancyParams(j_s, j_e, j_w, phis[j]),
        cost=float(best),
        feasible_count=int(np.isfinite(cost).sum()),
        evaluations=8 * n_phi,
    )
    return result, cmap


def bin_edges(bin_index: int, n_b: int):
    width = 2.0 * np.pi / n_b
    return bin_index * width, (bin_index + 1) * width


def _best_in_branch(geom, w, q0, target, flags, phis):
    q, degen = aik_branch_grid(geom, target, *flags, phis)
    cost = _grid_costs(geom, w, q0, q, degen)
    j = int(np.argmin(cost))
    return cost[j], q[j], phis[j]


def guided_select(geom: RobotGeometry, w: SelectionWeights, q0, target: Pose,
                  prediction, n_phi: int, n_b: int) -> SelectionResult:
    """Restricted search at the predicted (branch class, arm-angle bin).

    The primary attempt evaluates ceil(n_phi / n_b) equidistant angles
    inside the predicted bin with the predicted flags.  If every cell is
    infeasible the search escalates: (1) the two neighboring bins, (2)
    all bins with the predicted flags, (3) full exhaustive search.
    """
    q0 = np.asarray(q0, dtype=float)
    cls, bin_index = int(prediction[0]), int(prediction[1])
    if not 0 <= bin_index < n_b:
        raise ValueError(f"bin index {bin_index} out of range for n_b={n_b}")
    flags = flags_from_class(cls)
    n_pts = int(np.ceil(n_phi / n_b))

    lo, hi = bin_edges(bin_index, n_b)
    phis = np.linspace(lo, hi, n_pts) % (2.0 * np.pi)
    cost, q, phi = _best_in_branch(geom, w, q0, target, flags, phis)
    evals = n_pts
    if np.isfinite(cost):
        return SelectionResult(
            q_star=q, params_star=RedundancyParams(*flags, phi), cost=float(cost),
            feasible_count=1, evaluations=evals, fallback_level=0,
        )

    logger.info("guided_select: predicted bin empty, trying neighbor bins")
    neighbor = [(bin_index - 1) % n_b, (bin_index + 1) % n_b]
    cands = []
    for b in neighbor:
        lo, hi = bin_edges(b, n_b)
        phis = np.linspace(lo, hi, n_pts) % (2.0 * np.pi)
        cands.append(_best_in_branch(geom, w, q0, target, flags, phis))
        evals += n_pts
    cost, q, phi = min(cands, key=lambda t: t[0])
    if np.isfinite(cost):
        return SelectionResult(
            q_star=q, params_star=RedundancyParams(*flags, phi), cost=float(cost),
            feasible_count=1, evaluations=evals, fallback_level=1,
        )

    logger.info("guided_select: neighbor bins empty, trying full branch")
    phis = phi_grid(n_phi)
    cost, q, phi = _best_in_branch(geom, w, q0, target, flags, phis)
    evals += n_phi
    if np.isfinite(cost):
        return SelectionResult(
            q_star=q, params_star=RedundancyParams(*flags, phi), cost=float(cost),
            feasible_count=1, evaluations=evals, fallback_level=2,
        )

    logger.info("guided_select: branch empty, falling back to exhaustive")
    result, _ = exhaustive_select(geom, w, q0, target, n_phi)
    result.evaluations += evals
    result.fallback_level = 3
    return result
