"""Labeled database generation and its binary file format.

Each sample pairs a 19-dim feature vector zeta = [q0 (7) | e_x | e_y |
e_z | p_t] with the exhaustively-searched optimal redundancy parameters,
encoded as a branch class (0..7) and an arm-angle bin index (0..n_b-1).
Pairs are drawn per-index from independent RNG substreams seeded by
(seed, index), so the file payload is identical for any worker count.

File layout (little endian): an 80-byte header (magic "RDIK", version,
sample count, n_b, n_phi, weights, seed, geometry SHA-256) followed by
packed rows of 19 float64 plus two uint8 labels (154 bytes per sample).
"""

import csv
import logging
import multiprocessing
import struct
import time
from dataclasses import dataclass

import numpy as np

from .geometry import RobotGeometry
from .kinematics import Pose, forward_kinematics
from .selection import NoFeasibleTargetError, SelectionWeights, exhaustive_select

logger = logging.getLogger(__name__)

MAGIC = b"RDIK"
VERSION = 1
_HEADER_FMT = "<4sIQII d d Q 32s"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)

SAMPLE_DTYPE = np.dtype([
    ("zeta", "<f8", (19,)),
    ("label_class", "u1"),
    ("label_bin", "u1"),
])


@dataclass(frozen=True)
class DatasetHeader:
    sample_count: int
    n_b: int
    n_phi: int
    omega_m: float
    omega_c: float
    seed: int
    geometry_hash: str
    version: int = VERSION

    def pack(self) -> bytes:
        return struct.pack(
            _HEADER_FMT, MAGIC, self.version, self.sample_count, self.n_b,
            self.n_phi, self.omega_m, self.omega_c, self.seed,
            bytes.fromhex(self.geometry_hash),
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "DatasetHeader":
        magic, version, count, n_b, n_phi, wm, wc, seed, ghash = struct.unpack(
            _HEADER_FMT, raw
        )
        if magic != MAGIC:
            raise ValueError(f"not a dataset file (magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        return cls(sample_count=count, n_b=n_b, n_phi=n_phi, omega_m=wm,
                   omega_c=wc, seed=seed, geometry_hash=ghash.hex(), version=version)


@dataclass
class Sample:
    zeta: np.ndarray        # (19,)
    label_class: int        # 0..7
    label_bin: int          # 0..n_b-1


def sample_pair(geom: RobotGeometry, rng):
    """Random in-limits start configuration and a reachable target pose.

    The target is the forward kinematics of a second uniform random
    configuration, so reachability holds by construction.
    """
    q0 = rng.uniform(-geom.q_max, geom.q_max)
    q_target = rng.uniform(-geom.q_max, geom.q_max)
    return q0, forward_kinematics(geom, q_target)


def bin_of_phi(phi: float, n_b: int) -> int:
    width = 2.0 * np.pi / n_b
    return min(int(phi / width), n_b - 1)


def make_zeta(q0, target: Pose) -> np.ndarray:
    return np.concatenate([
        np.asarray(q0, float),
        target.R[:, 0], target.R[:, 1], target.R[:, 2], target.p,
    ])


def label_pair(geom: RobotGeometry, w: SelectionWeights, q0, target: Pose,
               n_phi: int, n_b: int) -> Sample:
    """Exhaustive-search label for one (q0, target) pair.

    Raises NoFeasibleTargetError when every grid cell violates limits;
    the caller discards and resamples.
    """
    result, _ = exhaustive_select(geom, w, q0, target, n_phi)
    return Sample(
        zeta=make_zeta(q0, target),
        label_class=result.params_star.branch_class,
        label_bin=bin_of_phi(result.params_star.phi, n_b),
    )


def labeled_row(geom, w, n_phi, n_b, seed, index):
    """One packed sample row; resamples in-stream until feasible.

    Returns (row, discards).  Deterministic in (seed, index) alone.
    """
    rng = np.random.default_rng([seed, index])
    discards = 0
    while True:
        q0, target = sample_pair(geom, rng)
        try:
            s = label_pair(geom, w, q0, target, n_phi, n_b)
            break
        except NoFeasibleTargetError:
            discards += 1
    row = np.zeros(1, dtype=SAMPLE_DTYPE)
    row["zeta"][0] = s.zeta
    row["label_class"][0] = s.label_class
    row["label_bin"][0] = s.label_bin
    return row, discards


def _worker_chunk(args):
    geom_cfg, wm, wc, n_phi, n_b, seed, start, stop = args
    geom = RobotGeometry(**geom_cfg)
    w = SelectionWeights(omega_m=wm, omega_c=wc)
    rows = np.zeros(stop - start, dtype=SAMPLE_DTYPE)
    discards = 0
    for i in range(start, stop):
        row, d = labeled_row(geom, w, n_phi, n_b, seed, i)
        rows[i - start] = row[0]
        discards += d
    return start, rows, discards


def _geom_cfg(geom: RobotGeometry) -> dict:
    return dict(d=geom.d, d_t=geom.d_t, q_max=np.array(geom.q_max),
                qd_max=np.array(geom.qd_max), tau_max=np.array(geom.tau_max))


def generate(geom: RobotGeometry, w: SelectionWeights, count: int, n_phi: int,
             n_b: int, seed: int, path, workers: int = 1,
             log_every: int = 20000) -> DatasetHeader:
    """Generate and write a labeled dataset file.

    The payload is ordered by sample index and bit-identical for any
    worker count.  Emits rate statistics through the module logger.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    header = DatasetHeader(sample_count=count, n_b=n_b, n_phi=n_phi,
                           omega_m=w.omega_m, omega_c=w.omega_c, seed=seed,
                           geometry_hash=geom.config_hash())
    t0 = time.monotonic()
    total_discards = 0
    try:
        with open(path, "wb") as f:
            f.write(header.pack())
            if workers <= 1:
                rows = np.zeros(min(count, log_every), dtype=SAMPLE_DTYPE)
                done = 0
                while done < count:
                    n = min(log_every, count - done)
                    for i in range(n):
                        row, d = labeled_row(geom, w, n_phi, n_b, seed, done + i)
                        rows[i] = row[0]
                        total_discards += d
                    rows[:n].tofile(f)
                    done += n
                    rate = done / (time.monotonic() - t0)
                    logger.info("generated %d/%d samples (%.0f samples/s)", done, count, rate)
            else:
                chunk = max(1, min(log_every, count // (workers * 4) + 1))
                tasks = [
                    (_geom_cfg(geom), w.omega_m, w.omega_c, n_phi, n_b, seed, s,
                     min(s + chunk, count))
                    for s in range(0, count, chunk)
                ]
                with multiprocessing.Pool(workers) as pool:
                    # chunks arrive in submission order, so the payload
                    # stays ordered by index regardless of completion order
                    for start, rows, d in pool.imap(_worker_chunk, tasks):
                        rows.tofile(f)
                        total_discards += d
                        done = start + len(rows)
                        rate = done / (time.monotonic() - t0)
                        logger.info("generated %d/%d samples (%.0f samples/s)",
                                    done, count, rate)
    except OSError as exc:
        raise OSError(f"writing dataset to {path}: {exc}") from exc
    elapsed = time.monotonic() - t0
    logger.info("dataset done: %d samples, %d discards, %.1f s (%.3f ms/pair)",
                count, total_discards, elapsed, 1e3 * elapsed / count)
    return header


def read_header(path) -> DatasetHeader:
    with open(path, "rb") as f:
        return DatasetHeader.unpack(f.read(HEADER_SIZE))


def load(path, mmap: bool = True):
    """Read a dataset file; returns (header, records).

    Records are a structured array with fields zeta/label_class/label_bin,
    memory-mapped by default.
    """
    header = read_header(path)
    if mmap:
        records = np.memmap(path, dtype=SAMPLE_DTYPE, mode="r",
                            offset=HEADER_SIZE, shape=(header.sample_count,))
    else:
        with open(path, "rb") as f:
            f.seek(HEADER_SIZE)
            records = np.fromfile(f, dtype=SAMPLE_DTYPE, count=header.sample_count)
    return header, records


def split_indices(header: DatasetHeader, fractions=(0.8, 0.1, 0.1)):
    """Deterministic shuffled train/validation/test index split.

    The permutation is derived from the header seed, so a split is
    reproducible from the file alone.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("fractions must be three values summing to 1")
    rng = np.random.default_rng([header.seed, 0x5B117])
    perm = rng.permutation(header.sample_count)
    n_train = int(round(fractions[0] * header.sample_count))
    n_val = int(round(fractions[1] * header.sample_count))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def export_csv(path, out_path, limit=None):
    """Human-inspectable CSV dump of a dataset file."""
    header, records = load(path)
    n = header.sample_count if limit is None else min(limit, header.sample_count)
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"zeta{i}" for i in range(19)] + ["label_class", "label_bin"])
        for i in range(n):
            writer.writerow(list(records["zeta"][i]) +
                            [int(records["label_class"][i]), int(records["label_bin"][i])])
