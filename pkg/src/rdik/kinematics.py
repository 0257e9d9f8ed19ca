"""Forward kinematics, Jacobian and manipulability of the 7-DoF S-R-S chain.

Frame conventions: every joint rotates about the local z-axis; the chain
alternates fixed reorientations A = Rz(pi) @ Rx(pi/2) and B = Rx(pi/2)
between joints, which places the shoulder (q1..q3), elbow (q4) and wrist
(q5..q7) axes in the standard S-R-S arrangement.  With this convention

    R_0^3 = Rz(q1) @ Ry(q2) @ Rz(q3)

and the chain is a straight vertical line at q = 0.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import RobotGeometry


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


# Fixed inter-joint reorientations of the chain.
ROT_A = rot_z(np.pi) @ rot_x(np.pi / 2)   # rows 2, 3, 5, 7
ROT_B = rot_x(np.pi / 2)                  # rows 4, 6
ROT_A.setflags(write=False)
ROT_B.setflags(write=False)

# One row per joint: (translation axis, fixed rotation applied after the
# translation and before the joint rotation).  Axis 1 = local y, 2 = local z.
# The tool row (translation d_t along the final z-axis) is applied after
# joint 7, so the wrist-to-tip offset is (d[6] + d_t) along the hand axis.
_CHAIN = (
    (2, None),
    (2, ROT_A),
    (1, ROT_A),
    (2, ROT_B),
    (1, ROT_A),
    (2, ROT_B),
    (1, ROT_A),
)


@dataclass
class Pose:
    """Rigid transform: rotation R (3x3) and position p (m)."""

    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.p = np.asarray(self.p, dtype=float).reshape(3)

    def validate(self, tol: float = 1e-9) -> "Pose":
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"R not orthonormal (|R'R - I| = {err:.3e})")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            raise ValueError("R is not a proper rotation (det != +1)")
        if not np.all(np.isfinite(self.p)):
            raise ValueError("non-finite position")
        return self


def as_joint_vector(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(7)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite joint vector")
    return q


@dataclass
class ChainFrames:
    """Joint origins/axes recorded during one kinematics pass."""

    origins: np.ndarray   # (7, 3) frame origins, origin i on the axis of joint i+1
    axes: np.ndarray      # (7, 3) joint rotation axes in the base frame
    R: np.ndarray         # tip orientation
    p: np.ndarray         # tip position


def chain_frames(geom: RobotGeometry, q) -> ChainFrames:
    q = as_joint_vector(q)
    R = np.eye(3)
    p = np.zeros(3)
    origins = np.empty((7, 3))
    axes = np.empty((7, 3))
    offsets = geom.d
    for i, (axis, fixed) in enumerate(_CHAIN):
        p = p + offsets[i] * R[:, axis]
        if fixed is not None:
            R = R @ fixed
        origins[i] = p
        axes[i] = R[:, 2]
        R = R @ rot_z(q[i])
    p = p + geom.d_t * R[:, 2]
    return ChainFrames(origins=origins, axes=axes, R=R, p=p)


def forward_kinematics(geom: RobotGeometry, q) -> Pose:
    """Tip pose of the chain for joint angles q."""
    fr = chain_frames(geom, q)
    return Pose(R=fr.R, p=fr.p)


def intermediate_points(geom: RobotGeometry, q):
    """Shoulder, elbow and wrist positions (p_s, p_e, p_w).

    p_s is constant at (0, 0, d1 + d2); |p_s - p_e| = d_se and
    |p_e - p_w| = d_ew hold for every q (rigid links).
    """
    fr = chain_frames(geom, q)
    p_s = np.array([0.0, 0.0, geom.d[0] + geom.d[1]])
    return p_s, fr.origins[3].copy(), fr.origins[5].copy()


def geometric_jacobian(geom: RobotGeometry, q) -> np.ndarray:
    """6x7 geometric Jacobian: rows 0-2 linear (m/rad), rows 3-5 angular."""
    fr = chain_frames(geom, q)
    J = np.empty((6, 7))
    for i in range(7):
        J[:3, i] = np.cross(fr.axes[i], fr.p - fr.origins[i])
        J[3:, i] = fr.axes[i]
    return J


def manipulability_det(geom: RobotGeometry, q) -> float:
    """sqrt(det(J J^T)); zero at kinematic singularities.

    Evaluated as the product of the singular values of J, which equals
    sqrt(det(J J^T)) exactly but keeps full relative accuracy near
    singular configurations (forming the Gram matrix first loses ~half
    the digits there).
    """
    J = geometric_jacobian(geom, q)
    return float(np.prod(np.linalg.svd(J, compute_uv=False)))


def manipulability_analytic(geom: RobotGeometry, q) -> np.ndarray:
    """Closed-form manipulability of the S-R-S chain.

    Depends only on q2..q6 and the two arm-segment lengths d_se, d_ew;
    vanishes with sin(q4).  Accepts arrays of shape (..., 7) and returns
    shape (...).  The coefficient signs were calibrated term-by-term
    against the determinant form (see tests); a squared value below
    -1e-9 means the geometry convention is broken and raises.
    """
    q = np.asarray(q, dtype=float)
    dse, dew = geom.d_se, geom.d_ew
    s2, c2 = np.sin(q[..., 1]), np.cos(q[..., 1])
    c3 = np.cos(q[..., 2])
    s4, c4 = np.sin(q[..., 3]), np.cos(q[..., 3])
    c5 = np.cos(q[..., 4])
    s6, c6 = np.sin(q[..., 5]), np.cos(q[..., 5])
    bracket = (
        dse**2 * s2**2 * s4**2 * c5**2 * c6**2
        + dew**2 * c2**2 * c3**2 * s4**2 * s6**2
        + (dse**2 + 2.0 * dse * dew * c4 + dew**2) * s2**2 * s6**2
        - 0.5 * (dse**2 * c4 + dse * dew) * s2**2 * s4 * c5 * (2.0 * s6 * c6)
        - 0.5 * (dew**2 * c4 + dse * dew) * (2.0 * s2 * c2) * c3 * s4 * s6**2
    )
    m2 = 2.0 * dse**2 * dew**2 * s4**2 * bracket
    if np.any(m2 < -1e-9):
        raise ValueError("closed-form squared manipulability is negative; "
                         "geometry convention mismatch")
    return np.sqrt(np.maximum(m2, 0.0))


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rodrigues(axis_unit, angle) -> np.ndarray:
    """Rotation about a unit axis; broadcasts over an array of angles.

    Returns shape (3, 3) for a scalar angle, (..., 3, 3) otherwise.
    """
    axis = np.asarray(axis_unit, dtype=float).reshape(3)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("rotation axis must be a unit vector")
    K = skew(axis)
    K2 = K @ K
    angle = np.asarray(angle, dtype=float)
    s = np.sin(angle)[..., None, None]
    c = (1.0 - np.cos(angle))[..., None, None]
    return np.eye(3) + s * K + c * K2
