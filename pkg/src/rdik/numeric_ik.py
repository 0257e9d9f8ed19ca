"""Damped least-squares iterative IK, the numerical baseline.

Update rule q <- q + J^T (J J^T + lambda^2 I)^{-1} e with the 6-vector
pose error e = [p_d - p(q); rotvec(R_d R(q)^T)].  Non-convergence within
the iteration budget is a flagged result, not an error, so Monte Carlo
harnesses can count it.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import RobotGeometry
from .kinematics import Pose, as_joint_vector, chain_frames


@dataclass(frozen=True)
class DlsSettings:
    damping: float = 0.1
    tol: float = 1e-8
    max_iters: int = 50

    def __post_init__(self):
        if self.damping <= 0 or self.tol <= 0 or self.max_iters < 1:
            raise ValueError("invalid DLS settings")


@dataclass
class DlsResult:
    q: np.ndarray
    iterations: int
    converged: bool
    error_norm: float


def rotation_vector(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (log map)."""
    cos_a = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w)
    if s < 1e-12:
        # angle ~ pi: axis from the symmetric part
        axis = np.sqrt(np.maximum((np.diag(R) + 1.0) / 2.0, 0.0))
        axis /= np.linalg.norm(axis)
        # fix signs against the off-diagonal terms
        if R[0, 1] + R[1, 0] < 0:
            axis[1] = -axis[1]
        if R[0, 2] + R[2, 0] < 0:
            axis[2] = -axis[2]
        return angle * axis
    return angle * w / s


def pose_error(target: Pose, fr) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target.p - fr.p
    e[3:] = rotation_vector(target.R @ fr.R.T)
    return e


def dls_solve(geom: RobotGeometry, target: Pose, q_init,
              settings: DlsSettings = DlsSettings()) -> DlsResult:
    """Iterate damped least squares from q_init toward the target pose."""
    q = as_joint_vector(q_init).copy()
    lam2 = settings.damping**2
    err = np.inf
    for it in range(settings.max_iters + 1):
        fr = chain_frames(geom, q)
        e = pose_error(target, fr)
        err = float(np.linalg.norm(e))
        if err < settings.tol:
            return DlsResult(q=q, iterations=it, converged=True, error_norm=err)
        if it == settings.max_iters:
            break
        J = np.empty((6, 7))
        for i in range(7):
            J[:3, i] = np.cross(fr.axes[i], fr.p - fr.origins[i])
            J[3:, i] = fr.axes[i]
        y = np.linalg.solve(J @ J.T + lam2 * np.eye(6), e)
        q = q + J.T @ y
    return DlsResult(q=q, iterations=settings.max_iters, converged=False, error_norm=err)


def wrap_to_pi(q) -> np.ndarray:
    """Wrap each joint angle into (-pi, pi] (FK is 2pi-periodic)."""
    q = np.asarray(q, dtype=float)
    return -((-q + np.pi) % (2.0 * np.pi) - np.pi)
