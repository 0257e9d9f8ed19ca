"""Robot geometry: link offsets and joint limits of the 7-DoF S-R-S arm.

The kinematic structure (joint axes, frame conventions) is fixed; the
numeric link offsets and limits are loaded from a JSON config so other
robots of the same family can be plugged in.  The shipped default is the
KUKA LBR iiwa 14 R820 with vendor-published offsets (externally sourced,
see data/iiwa14.json).
"""

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

_CONFIG_KEYS = ("d", "d_t", "q_max_deg", "qd_max_deg_s", "tau_max_Nm")


@dataclass(frozen=True)
class RobotGeometry:
    """Link offsets (m) and symmetric joint limits of the S-R-S chain.

    d[0..6] are the seven inter-frame offsets, d_t the tool offset.
    Limits are stored in radians (converted from the degree-valued
    config).  Torque limits are parsed and kept but not used by any
    kinematic operation.
    """

    d: tuple
    d_t: float
    q_max: np.ndarray = field(repr=False)
    qd_max: np.ndarray = field(repr=False)
    tau_max: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.d) != 7:
            raise ValueError(f"need 7 link offsets, got {len(self.d)}")
        if any(di <= 0 for di in self.d) or self.d_t <= 0:
            raise ValueError("link offsets must be strictly positive")
        for name in ("q_max", "qd_max", "tau_max"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (7,):
                raise ValueError(f"{name} must have 7 entries")
            if np.any(arr <= 0):
                raise ValueError(f"{name} must be strictly positive")
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    @property
    def d_se(self) -> float:
        """Shoulder-to-elbow distance (constant for all q)."""
        return self.d[2] + self.d[3]

    @property
    def d_ew(self) -> float:
        """Elbow-to-wrist distance (constant for all q)."""
        return self.d[4] + self.d[5]

    @property
    def d_wt(self) -> float:
        """Wrist-to-tip distance along the hand axis."""
        return self.d[6] + self.d_t

    def within_limits(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(np.abs(q) <= self.q_max + 1e-12))

    def config_hash(self) -> str:
        """SHA-256 over the canonical numeric content, for dataset headers."""
        payload = json.dumps(
            {
                "d": list(self.d),
                "d_t": self.d_t,
                "q_max": self.q_max.tolist(),
                "qd_max": self.qd_max.tolist(),
                "tau_max": self.tau_max.tolist(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def geometry_from_dict(cfg: dict) -> RobotGeometry:
    """Build a RobotGeometry from a parsed config dict, rejecting wrong arity."""
    missing = [k for k in _CONFIG_KEYS if k not in cfg]
    if missing:
        raise ValueError(f"geometry config missing fields: {missing}")
    d = cfg["d"]
    if not isinstance(d, (list, tuple)) or len(d) != 7:
        raise ValueError("field 'd' must be an array of 7 offsets")
    for name in ("q_max_deg", "qd_max_deg_s", "tau_max_Nm"):
        if not isinstance(cfg[name], (list, tuple)) or len(cfg[name]) != 7:
            raise ValueError(f"field '{name}' must be an array of 7 values")
    return RobotGeometry(
        d=tuple(float(x) for x in d),
        d_t=float(cfg["d_t"]),
        q_max=np.deg2rad(np.asarray(cfg["q_max_deg"], dtype=float)),
        qd_max=np.deg2rad(np.asarray(cfg["qd_max_deg_s"], dtype=float)),
        tau_max=np.asarray(cfg["tau_max_Nm"], dtype=float),
    )


def load_geometry(path=None) -> RobotGeometry:
    """Load geometry from a JSON file, or the packaged iiwa 14 default."""
    if path is None:
        text = resources.files("rdik").joinpath("data/iiwa14.json").read_text()
    else:
        with open(path) as f:
            text = f.read()
    return geometry_from_dict(json.loads(text))
