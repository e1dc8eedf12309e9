"""Pose types and the camera-to-robot calibration fit.

A pose is 7 numbers: position xyz plus a unit quaternion (x, y, z, w order,
Hamilton convention, sign-canonicalized so qw >= 0). Calibration stacks paired
camera/robot pose vectors column-wise and solves the least-squares linear map
T (7x7) with a pseudoinverse, exactly as the observation protocol defines it.
A linear action on quaternions is improper in general, so the mapped
quaternion is renormalized and the fit requires sign-canonicalized data.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateObservationsError,
    FormatError,
    GeometryError,
    MappingDegenerateError,
)

_CSV_HEADER = "cx,cy,cz,cqx,cqy,cqz,cqw,rx,ry,rz,rqx,rqy,rqz,rqw"


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    """Flip sign so qw >= 0; if qw == 0, the first nonzero of (qx, qy, qz) is > 0."""
    x, y, z, w = q
    if w < 0:
        return -q
    if w == 0:
        for c in (x, y, z):
            if c != 0:
                return q if c > 0 else -q
    return q


@dataclass(frozen=True)
class Pose7:
    """Position (meters) plus unit quaternion (x, y, z, w), qw >= 0."""

    x: float
    y: float
    z: float
    qx: float
    qy: float
    qz: float
    qw: float

    def __post_init__(self):
        q = np.array([self.qx, self.qy, self.qz, self.qw], dtype=float)
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-9:
            raise GeometryError(f"quaternion norm {n} deviates from 1 beyond 1e-9")
        q = _canonical_quat(q)
        for name, val in zip(("qx", "qy", "qz", "qw"), q):
            object.__setattr__(self, name, float(val))

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.qx, self.qy, self.qz, self.qw])

    @classmethod
    def from_vector(cls, vec, normalize: bool = False) -> "Pose7":
        vec = np.asarray(vec, dtype=float).reshape(7)
        q = vec[3:]
        if normalize:
            n = np.linalg.norm(q)
            if n < 1e-6:
                raise MappingDegenerateError(f"quaternion norm {n} too small to normalize")
            q = q / n
        return cls(vec[0], vec[1], vec[2], q[0], q[1], q[2], q[3])

    def quaternion(self) -> np.ndarray:
        return np.array([self.qx, self.qy, self.qz, self.qw])

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def rpy_to_quaternion(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Extrinsic X-Y-Z Euler angles to a unit quaternion (x, y, z, w).

    Hamilton composition q_z(yaw) q_y(pitch) q_x(roll), sign-canonicalized.
    """
    for name, a in (("roll", roll), ("pitch", pitch), ("yaw", yaw)):
        if not math.isfinite(a):
            raise GeometryError(f"{name} must be finite")
    sr, cr = math.sin(roll / 2.0), math.cos(roll / 2.0)
    sp, cp = math.sin(pitch / 2.0), math.cos(pitch / 2.0)
    sy, cy = math.sin(yaw / 2.0), math.cos(yaw / 2.0)
    q = np.array(
        [
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
            cr * cp * cy + sr * sp * sy,
        ]
    )
    return _canonical_quat(q / np.linalg.norm(q))


def pose_from_grasp(grasp, depth_at_center: float, intrinsics: dict) -> Pose7:
    """Back-project an image grasp to a camera-frame pose.

    Pinhole position from (u, v, depth); orientation is the downward-facing
    (roll=pi, pitch=0, yaw=grasp angle) convention.
    """
    if depth_at_center <= 0:
        raise GeometryError(f"depth must be positive, got {depth_at_center}")
    fx, fy = intrinsics["fx"], intrinsics["fy"]
    cx, cy = intrinsics["cx"], intrinsics["cy"]
    if fx <= 0 or fy <= 0:
        raise GeometryError("focal lengths must be positive")
    x = (grasp.u - cx) * depth_at_center / fx
    y = (grasp.v - cy) * depth_at_center / fy
    q = rpy_to_quaternion(math.pi, 0.0, grasp.angle)
    return Pose7(x, y, depth_at_center, *q)


@dataclass
class ObservationSet:
    """Paired (camera_pose, robot_pose) observations for the calibration fit."""

    pairs: list

    def __post_init__(self):
        if not self.pairs:
            raise FormatError("observation set is empty")
        seen = set()
        dupes = 0
        for cam, rob in self.pairs:
            key = (tuple(cam.as_vector()), tuple(rob.as_vector()))
            if key in seen:
                dupes += 1
            seen.add(key)
        if dupes:
            warnings.warn(f"observation set contains {dupes} duplicate pair(s)")

    def __len__(self) -> int:
        return len(self.pairs)

    def camera_matrix(self) -> np.ndarray:
        return np.stack([c.as_vector() for c, _ in self.pairs], axis=1)

    def robot_matrix(self) -> np.ndarray:
        return np.stack([r.as_vector() for _, r in self.pairs], axis=1)

    def to_csv(self, path) -> None:
        lines = [_CSV_HEADER]
        for cam, rob in self.pairs:
            vals = np.concatenate([cam.as_vector(), rob.as_vector()])
            lines.append(",".join(repr(float(v)) for v in vals))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ObservationSet":
        path = Path(path)
        lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
        if not lines or lines[0].replace(" ", "") != _CSV_HEADER:
            raise FormatError(f"{path}: first line must be the header {_CSV_HEADER!r}")
        pairs = []
        for lineno, ln in enumerate(lines[1:], start=2):
            vals = [float(tok) for tok in ln.split(",")]
            if len(vals) != 14:
                raise FormatError(f"{path}:{lineno}: expected 14 values, got {len(vals)}")
            pairs.append(
                (Pose7.from_vector(vals[:7], normalize=True),
                 Pose7.from_vector(vals[7:], normalize=True))
            )
        return cls(pairs)


@dataclass(eq=False)
class MappingMatrix:
    """The 7x7 least-squares map from camera pose vectors to robot pose vectors."""

    T: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.T, dtype=float)
        if t.shape != (7, 7) or not np.all(np.isfinite(t)):
            raise FormatError("mapping matrix must be a finite 7x7 array")
        self.T = t

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.T.tolist(), indent=1))

    @classmethod
    def from_json(cls, path) -> "MappingMatrix":
        return cls(np.array(json.loads(Path(path).read_text())))


_RANK_RTOL = 1e-10


def fit_mapping(obs: ObservationSet) -> MappingMatrix:
    """T = R pinv(C) over column-stacked pose vectors.

    Singular values below 1e-10 of the largest are treated as zero; a camera
    matrix of rank < 7 cannot determine the map and raises.
    """
    c = obs.camera_matrix()
    r = obs.robot_matrix()
    n = c.shape[1]
    sv = np.linalg.svd(c, compute_uv=False)
    rank = int(np.sum(sv > _RANK_RTOL * sv[0]))
    if n < 7 or rank < 7:
        raise DegenerateObservationsError(
            f"observations span rank {rank} of 7 (n={n}); vary positions and orientations",
            rank=rank,
        )
    t = r @ np.linalg.pinv(c, rcond=_RANK_RTOL)
    return MappingMatrix(t)


def apply_mapping(mapping: MappingMatrix, camera_pose: Pose7) -> Pose7:
    """Map a camera-frame pose vector through T; renormalize the quaternion part."""
    raw = mapping.T @ camera_pose.as_vector()
    qn = float(np.linalg.norm(raw[3:]))
    if qn < 1e-6:
        raise MappingDegenerateError(
            f"mapped quaternion norm {qn:.2e} is too small; the fit is degenerate here"
        )
    return Pose7.from_vector(raw, normalize=True)


def make_t_star(seed: int = 0) -> np.ndarray:
    """A full-rank 7x7 ground-truth map that sends unit quaternions to unit
    quaternions: invertible position block, orthogonal quaternion block."""
    rng = np.random.default_rng(seed)
    a = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    b = 0.2 * rng.standard_normal((3, 4))
    q_block, _ = np.linalg.qr(np.eye(4) + 0.02 * rng.standard_normal((4, 4)))
    q_block = q_block * np.sign(np.diag(q_block))
    t = np.zeros((7, 7))
    t[:3, :3] = a
    t[:3, 3:] = b
    t[3:, 3:] = q_block
    return t


def synth_observations(
    t_star: np.ndarray, n_positions: int = 10, angles_deg=(0.0, 45.0, 90.0, 135.0), seed: int = 0
) -> ObservationSet:
    """Noiseless observations from a known map: n_positions camera placements,
    each recorded at every yaw angle, with small per-placement tilts so the
    camera matrix reaches full rank."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_positions):
        pos = rng.uniform([0.3, -0.3, 0.2], [0.7, 0.3, 0.6])
        roll = math.pi - 1.0 + 0.2 * rng.uniform(-1.0, 1.0)
        pitch = 0.1 * rng.uniform(-1.0, 1.0)
        for angle in angles_deg:
            q = rpy_to_quaternion(roll, pitch, math.radians(angle))
            cam = Pose7(*pos, *q)
            rob_vec = t_star @ cam.as_vector()
            if rob_vec[6] <= 0:
                raise GeometryError(
                    "synthetic protocol produced a non-canonical robot quaternion"
                )
            pairs.append((cam, Pose7.from_vector(rob_vec)))
    return ObservationSet(pairs)
