"""Closed-form inverse kinematics of the S-R-S arm.

A target pose plus redundancy parameters (three branch flags and the arm
angle) determine a unique joint configuration.  The arm angle measures
the rotation of the shoulder-elbow-wrist plane about the shoulder-wrist
axis, zero at the reference arm where q3 = 0; positive angles follow the
right-hand rule about the unit shoulder-wrist vector.

`analytic_ik` is the scalar solver; `aik_grid` evaluates all 8 branch
combinations over an array of arm angles in one vectorized pass (the hot
path of exhaustive search and dataset labeling).  Both are total on
reachable targets: at internal singularities they return a flagged
conventional solution instead of failing, so grid search can still score
every cell.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import RobotGeometry
from .kinematics import (
    ROT_A,
    ROT_B,
    Pose,
    as_joint_vector,
    intermediate_points,
    rodrigues,
    rot_y,
    rot_z,
)

# |sin q2|, |sin q4|, |sin q6| below this are treated as singular branches.
EPS_SINGULAR = 1e-6
# arccos arguments may exceed [-1, 1] by at most this before it's an error.
EPS_ACOS = 1e-9
# wrist-on-base-axis threshold (meters) for the reference-arm atan2.
EPS_AXIS = 1e-9


class UnreachableError(ValueError):
    """Target wrist point outside the reachable annulus."""


def _clamped_arccos(x: float) -> float:
    if x > 1.0 + EPS_ACOS or x < -1.0 - EPS_ACOS:
        raise UnreachableError(f"arccos argument {x:.6e} out of range")
    return float(np.arccos(np.clip(x, -1.0, 1.0)))


@dataclass(frozen=True)
class RedundancyParams:
    """Branch flags (each in {-1, +1}) and arm angle in [0, 2*pi)."""

    j_s: int
    j_e: int
    j_w: int
    phi: float

    def __post_init__(self):
        for name in ("j_s", "j_e", "j_w"):
            if getattr(self, name) not in (-1, 1):
                raise ValueError(f"{name} must be -1 or +1")
        object.__setattr__(self, "phi", float(self.phi) % (2.0 * np.pi))

    @property
    def branch_class(self) -> int:
        """Index 0..7: bit 2 = shoulder, bit 1 = elbow, bit 0 = wrist."""
        return 4 * (self.j_s + 1) // 2 + 2 * (self.j_e + 1) // 2 + (self.j_w + 1) // 2


def flags_from_class(index: int):
    """Inverse of RedundancyParams.branch_class."""
    if not 0 <= index <= 7:
        raise ValueError(f"branch class must be 0..7, got {index}")
    return (
        1 if index & 4 else -1,
        1 if index & 2 else -1,
        1 if index & 1 else -1,
    )


def wrist_point(geom: RobotGeometry, target: Pose) -> np.ndarray:
    """Wrist center for a target pose: p_t - R (0, 0, d7 + d_t)^T."""
    return target.p - geom.d_wt * target.R[:, 2]


def shoulder_point(geom: RobotGeometry) -> np.ndarray:
    return np.array([0.0, 0.0, geom.d[0] + geom.d[1]])


def elbow_angle(geom: RobotGeometry, p_sw, j_e: int) -> float:
    """Elbow joint angle from the shoulder-wrist distance (law of cosines).

    Zero at full extension, +/-pi at the fully folded boundary; the sign
    is the elbow branch flag.  Raises UnreachableError outside the
    annulus [|d_se - d_ew|, d_se + d_ew].
    """
    dist2 = float(np.dot(p_sw, p_sw))
    arg = (dist2 - geom.d_se**2 - geom.d_ew**2) / (2.0 * geom.d_se * geom.d_ew)
    return j_e * _clamped_arccos(arg)


def reference_arm(geom: RobotGeometry, p_sw, j_e: int):
    """Shoulder angles (q1n, q2n) of the reference arm with q3 = 0.

    Returns (q1n, q2n, shoulder_singular).  When the wrist sits on the
    base z-axis the first angle is ill-defined; q1n := 0 by convention
    and the flag is set.
    """
    x, y, z = float(p_sw[0]), float(p_sw[1]), float(p_sw[2])
    r_xy = np.hypot(x, y)
    norm = np.sqrt(x * x + y * y + z * z)
    singular = r_xy < EPS_AXIS
    q1n = 0.0 if singular else float(np.arctan2(y, x))
    gamma = j_e * _clamped_arccos(
        (geom.d_se**2 + norm**2 - geom.d_ew**2) / (2.0 * geom.d_se * norm)
    )
    q2n = float(np.arctan2(r_xy, z)) + gamma
    return q1n, q2n, singular


@dataclass
class IkSolution:
    """Joint vector plus a degeneracy note for singular branches."""

    q: np.ndarray
    degenerate: bool = False
    note: str = ""


def _shoulder_base_rotation(geom: RobotGeometry, p_sw, params: RedundancyParams):
    """R_0^3 of the requested solution: arm-angle rotation applied to the
    reference arm, shared by the scalar and grid solvers."""
    q1n, q2n, sh_sing = reference_arm(geom, p_sw, params.j_e)
    r0n3 = rot_z(q1n) @ rot_y(q2n)
    axis = p_sw / np.linalg.norm(p_sw)
    return rodrigues(axis, params.phi) @ r0n3, sh_sing


def analytic_ik(geom: RobotGeometry, target: Pose, params: RedundancyParams) -> IkSolution:
    """Unique joint configuration for (target pose, redundancy parameters).

    The forward kinematics of the result reproduce the target to ~1e-12.
    At shoulder/wrist singularities (|sin q2| or |sin q6| ~ 0) the
    non-unique angle pair collapses by the convention q3 := 0 (resp.
    q5 := 0) with the partner angle solved from the rotation residual,
    and the solution is flagged degenerate.
    """
    p_sw = wrist_point(geom, target) - shoulder_point(geom)
    q4 = elbow_angle(geom, p_sw, params.j_e)
    r03, sh_sing = _shoulder_base_rotation(geom, p_sw, params)

    degenerate = sh_sing
    note = "shoulder-axis" if sh_sing else ""

    js = params.j_s
    q2 = js * _clamped_arccos(r03[2, 2])
    if abs(np.sin(q2)) < EPS_SINGULAR:
        # q1 and q3 only act through their sum (or difference); fix q3 = 0
        # and solve q1 from the residual so FK still matches the target.
        q3 = 0.0
        m = r03 @ rot_y(q2).T
        q1 = float(np.arctan2(m[1, 0], m[0, 0]))
        degenerate, note = True, (note + " shoulder-branch").strip()
    else:
        q1 = float(np.arctan2(js * r03[1, 2], js * r03[0, 2]))
        q3 = float(np.arctan2(js * r03[2, 1], -js * r03[2, 0]))

    r47 = (r03 @ ROT_B @ rot_z(q4)).T @ target.R

    jw = params.j_w
    q6 = jw * _clamped_arccos(r47[1, 2])
    if abs(np.sin(q6)) < EPS_SINGULAR:
        q5 = 0.0
        m = (ROT_A @ ROT_B @ rot_z(q6) @ ROT_A).T @ r47
        q7 = float(np.arctan2(m[1, 0], m[0, 0]))
        degenerate, note = True, (note + " wrist-branch").strip()
    else:
        q5 = float(np.arctan2(-jw * r47[2, 2], jw * r47[0, 2]))
        q7 = float(np.arctan2(jw * r47[1, 1], -jw * r47[1, 0]))

    if abs(np.sin(q4)) < EPS_SINGULAR:
        degenerate, note = True, (note + " elbow-stretch").strip()

    q = np.array([q1, q2, q3, q4, q5, q6, q7])
    return IkSolution(q=q, degenerate=degenerate, note=note)


@dataclass
class ExtractedParams:
    params: RedundancyParams
    degenerate: bool = False
    note: str = ""


def _sign(x: float) -> int:
    return -1 if x < 0 else 1


def extract_params(geom: RobotGeometry, q) -> ExtractedParams:
    """Branch flags and arm angle realized by a configuration.

    Flags are the signs of q2, q4, q6 (sign(0) := +1).  The arm angle is
    the right-hand-rule angle about the shoulder-wrist axis from the
    reference elbow to the actual elbow.  With the elbow collinear to
    that axis (|sin q4| ~ 0) the plane is undefined: phi := 0, flagged.
    """
    q = as_joint_vector(q)
    j_s, j_e, j_w = _sign(q[1]), _sign(q[3]), _sign(q[5])
    p_s, p_e, p_w = intermediate_points(geom, q)
    p_sw = p_w - p_s

    if abs(np.sin(q[3])) < EPS_SINGULAR:
        return ExtractedParams(
            RedundancyParams(j_s, j_e, j_w, 0.0), degenerate=True, note="elbow-collinear"
        )

    q1n, q2n, sh_sing = reference_arm(geom, p_sw, j_e)
    s2n, c2n = np.sin(q2n), np.cos(q2n)
    arm_dir_ref = np.array([np.cos(q1n) * s2n, np.sin(q1n) * s2n, c2n])

    axis = p_sw / np.linalg.norm(p_sw)
    v_ref = arm_dir_ref - axis * np.dot(axis, arm_dir_ref)
    v_act = (p_e - p_s) - axis * np.dot(axis, p_e - p_s)
    phi = float(np.arctan2(np.dot(axis, np.cross(v_ref, v_act)), np.dot(v_ref, v_act)))
    return ExtractedParams(
        RedundancyParams(j_s, j_e, j_w, phi), degenerate=sh_sing,
        note="shoulder-axis" if sh_sing else "",
    )


# ---------------------------------------------------------------------------
# Vectorized grid evaluation (all 8 branches x many arm angles in one pass)
# ---------------------------------------------------------------------------

@dataclass
class GridSolutions:
    """AIK over a phi grid: q has shape (8, n, 7), indexed by branch class."""

    q: np.ndarray
    degenerate: np.ndarray   # (8, n) bool
    phis: np.ndarray         # (n,)


def aik_grid(geom: RobotGeometry, target: Pose, phis) -> GridSolutions:
    """Evaluate the closed-form IK on the full branch x arm-angle grid.

    Equivalent to calling analytic_ik cell by cell (the tests check this)
    but evaluated with batched 3x3 algebra.  Degenerate cells carry the
    plain-branch angles rather than the scalar solver's conventional
    values; they are flagged and excluded by the selection layer.
    """
    phis = np.asarray(phis, dtype=float)
    n = phis.shape[0]
    p_sw = wrist_point(geom, target) - shoulder_point(geom)

    q4 = np.empty(2)            # per elbow flag (index 0: -1, 1: +1)
    r0n3 = np.empty((2, 3, 3))
    sh_sing = False
    for k, j_e in enumerate((-1, 1)):
        q4[k] = elbow_angle(geom, p_sw, j_e)
        q1n, q2n, sing = reference_arm(geom, p_sw, j_e)
        r0n3[k] = rot_z(q1n) @ rot_y(q2n)
        sh_sing = sh_sing or sing

    axis = p_sw / np.linalg.norm(p_sw)
    r_phi = rodrigues(axis, phis)                       # (n, 3, 3)
    r03 = np.einsum("nab,ebc->enac", r_phi, r0n3)       # (2, n, 3, 3)

    r34 = np.stack([ROT_B @ rot_z(q4[0]), ROT_B @ rot_z(q4[1])])
    r04 = np.einsum("enab,ebc->enac", r03, r34)
    r47 = np.einsum("enba,bc->enac", r04, target.R)     # (R_0^4)^T @ R_d

    q = np.empty((8, n, 7))
    degen = np.zeros((8, n), dtype=bool)
    acos22 = np.arccos(np.clip(r03[..., 2, 2], -1.0, 1.0))   # (2, n)
    acos12 = np.arccos(np.clip(r47[..., 1, 2], -1.0, 1.0))
    for cls in range(8):
        j_s, j_e, j_w = flags_from_class(cls)
        e = (j_e + 1) // 2
        q2 = j_s * acos22[e]
        q1 = np.arctan2(j_s * r03[e, :, 1, 2], j_s * r03[e, :, 0, 2])
        q3 = np.arctan2(j_s * r03[e, :, 2, 1], -j_s * r03[e, :, 2, 0])
        q6 = j_w * acos12[e]
        q5 = np.arctan2(-j_w * r47[e, :, 2, 2], j_w * r47[e, :, 0, 2])
        q7 = np.arctan2(j_w * r47[e, :, 1, 1], -j_w * r47[e, :, 1, 0])
        q[cls, :, 0] = q1
        q[cls, :, 1] = q2
        q[cls, :, 2] = q3
        q[cls, :, 3] = q4[e]
        q[cls, :, 4] = q5
        q[cls, :, 5] = q6
        q[cls, :, 6] = q7
        degen[cls] = (
            sh_sing
            | (np.abs(np.sin(q2)) < EPS_SINGULAR)
            | (np.abs(np.sin(q6)) < EPS_SINGULAR)
            | (abs(np.sin(q4[e])) < EPS_SINGULAR)
        )
    return GridSolutions(q=q, degenerate=degen, phis=phis)


def aik_branch_grid(geom: RobotGeometry, target: Pose, j_s: int, j_e: int, j_w: int, phis):
    """Single-branch variant of aik_grid: returns (q (n,7), degenerate (n,))."""
    phis = np.asarray(phis, dtype=float)
    p_sw = wrist_point(geom, target) - shoulder_point(geom)
    q4 = elbow_angle(geom, p_sw, j_e)
    q1n, q2n, sh_sing = reference_arm(geom, p_sw, j_e)
    r0n3 = rot_z(q1n) @ rot_y(q2n)

    axis = p_sw / np.linalg.norm(p_sw)
    r03 = rodrigues(axis, phis) @ r0n3                  # (n, 3, 3)
    r47 = np.einsum("nba,bc->nac", r03 @ (ROT_B @ rot_z(q4)), target.R)

    q = np.empty((phis.shape[0], 7))
    q[:, 1] = j_s * np.arccos(np.clip(r03[:, 2, 2], -1.0, 1.0))
    q[:, 0] = np.arctan2(j_s * r03[:, 1, 2], j_s * r03[:, 0, 2])
    q[:, 2] = np.arctan2(j_s * r03[:, 2, 1], -j_s * r03[:, 2, 0])
    q[:, 3] = q4
    q[:, 5] = j_w * np.arccos(np.clip(r47[:, 1, 2], -1.0, 1.0))
    q[:, 4] = np.arctan2(-j_w * r47[:, 2, 2], j_w * r47[:, 0, 2])
    q[:, 6] = np.arctan2(j_w * r47[:, 1, 1], -j_w * r47[:, 1, 0])
    degen = (
        sh_sing
        | (np.abs(np.sin(q[:, 1])) < EPS_SINGULAR)
        | (np.abs(np.sin(q[:, 5])) < EPS_SINGULAR)
        | (abs(np.sin(q4)) < EPS_SINGULAR)
    )
    return q, degen
