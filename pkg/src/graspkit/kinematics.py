"""A configurable 7-joint serial arm: forward kinematics, geometric Jacobian,
and damped-least-squares inverse kinematics on the 6-D pose error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, GeometryError, UnreachablePoseError
from .calibration import Pose7, _canonical_quat

N_JOINTS = 7


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    offset: np.ndarray
    limits: tuple

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ConfigError(f"joint axis must be unit length, got {axis}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        lo, hi = self.limits
        if not lo < hi:
            raise ConfigError(f"joint limits must satisfy low < high, got ({lo}, {hi})")


@dataclass(eq=False)
class KinematicChain:
    """Seven revolute joints; each applies its fixed translation, then rotates."""

    joints: list
    base: np.ndarray
    tool: np.ndarray
    home: np.ndarray

    def __post_init__(self):
        if len(self.joints) != N_JOINTS:
            raise ConfigError(f"chain needs exactly {N_JOINTS} joints, got {len(self.joints)}")
        self.base = np.asarray(self.base, dtype=float).reshape(4, 4)
        self.tool = np.asarray(self.tool, dtype=float).reshape(4, 4)
        self.home = np.asarray(self.home, dtype=float).reshape(N_JOINTS)
        self.check_limits(self.home)

    def check_limits(self, joints: np.ndarray) -> None:
        for i, (j, q) in enumerate(zip(self.joints, joints)):
            lo, hi = j.limits
            if q < lo - 1e-12 or q > hi + 1e-12:
                raise GeometryError(
                    f"joint {i} value {q:.4f} outside limits [{lo}, {hi}]"
                )

    def clip_limits(self, joints: np.ndarray) -> np.ndarray:
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        return np.clip(joints, lo, hi)

    @classmethod
    def from_cfg(cls, path) -> "KinematicChain":
        """Parse a chain file: 7 'joint ax ay az ox oy oz lo hi' lines plus
        'base x y z', 'tool x y z' and 'home q1..q7'."""
        path = Path(path)
        joints = []
        base = np.eye(4)
        tool = np.eye(4)
        home = np.zeros(N_JOINTS)
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            key, vals = parts[0], [float(v) for v in parts[1:]]
            if key == "joint":
                if len(vals) != 8:
                    raise FormatError(f"{path}:{lineno}: joint needs 8 numbers")
                joints.append(Joint(vals[0:3], vals[3:6], (vals[6], vals[7])))
            elif key == "base":
                base = _translation(vals)
            elif key == "tool":
                tool = _translation(vals)
            elif key == "home":
                home = np.array(vals)
            else:
                raise FormatError(f"{path}:{lineno}: unknown directive {key!r}")
        return cls(joints, base, tool, home)


def _translation(xyz) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = xyz
    return m


def _axis_rotation(axis: np.ndarray, theta: float) -> np.ndarray:
    x, y, z = axis
    c, s = math.cos(theta), math.sin(theta)
    t = 1.0 - c
    m = np.eye(4)
    m[:3, :3] = [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
    return m


def _quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to (x, y, z, w), largest-pivot branch, canonical sign."""
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s, 0.25 * s]
        )
    else:
        i = int(np.argmax([r[0, 0], r[1, 1], r[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.zeros(4)
        q[i] = 0.25 * s
        q[j] = (r[j, i] + r[i, j]) / s
        q[k] = (r[k, i] + r[i, k]) / s
        q[3] = (r[k, j] - r[j, k]) / s
    q = q / np.linalg.norm(q)
    return _canonical_quat(q)


def _rotvec_from_matrix(r: np.ndarray) -> np.ndarray:
    cos_t = min(1.0, max(-1.0, (r[0, 0] + r[1, 1] + r[2, 2] - 1.0) / 2.0))
    theta = math.acos(cos_t)
    if theta < 1e-12:
        return np.zeros(3)
    if math.pi - theta < 1e-6:
        # near a half turn the skew part vanishes; recover the axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        col = int(np.argmax(axis))
        if axis[col] > 0:
            axis = m[:, col] / axis[col]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta * axis / (2.0 * math.sin(theta))


def _frames(chain: KinematicChain, joints: np.ndarray):
    """World transform after each joint plus the final tool transform."""
    m = chain.base.copy()
    frames = []
    for joint, theta in zip(chain.joints, joints):
        m = m @ _translation(joint.offset)
        frames.append(m.copy())
        m = m @ _axis_rotation(joint.axis, theta)
    return frames, m @ chain.tool


def fk_matrix(chain: KinematicChain, joints) -> np.ndarray:
    joints = np.asarray(joints, dtype=float).reshape(N_JOINTS)
    chain.check_limits(joints)
    _, m = _frames(chain, joints)
    return m


def fk(chain: KinematicChain, joints) -> Pose7:
    """Tool pose for a joint vector (joints must respect limits)."""
    m = fk_matrix(chain, joints)
    q = _quat_from_matrix(m[:3, :3])
    return Pose7(m[0, 3], m[1, 3], m[2, 3], *q)


def jacobian(chain: KinematicChain, joints) -> np.ndarray:
    """Geometric Jacobian (6x7): columns are (z_i x (p_e - p_i), z_i)."""
    joints = np.asarray(joints, dtype=float).reshape(N_JOINTS)
    frames, tool = _frames(chain, joints)
    p_e = tool[:3, 3]
    jac = np.zeros((6, N_JOINTS))
    for i, (joint, frame) in enumerate(zip(chain.joints, frames)):
        z = frame[:3, :3] @ joint.axis
        p = frame[:3, 3]
        jac[:3, i] = np.cross(z, p_e - p)
        jac[3:, i] = z
    return jac


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def ik(
    chain: KinematicChain,
    target: Pose7,
    seed_joints=None,
    max_iters: int = 500,
    damping: float = 1e-2,
    pos_tol: float = 1e-4,
    rot_tol: float = 1e-3,
    step_limit: float = 0.3,
) -> np.ndarray:
    """Damped-least-squares inverse kinematics.

    Iterates dq = J^T (J J^T + damping^2 I)^-1 e on the stacked position /
    rotation-vector error, clamping per-joint steps and joint limits, until the
    forward pose is within (pos_tol, rot_tol) of the target.
    """
    seed = np.array(chain.home if seed_joints is None else seed_joints, dtype=float)
    chain.check_limits(seed)
    lo = np.array([j.limits[0] for j in chain.joints])
    hi = np.array([j.limits[1] for j in chain.joints])
    q = seed.copy()
    p_t = target.position()
    r_t = _quat_to_matrix(target.quaternion())
    lam2 = damping * damping
    eye6 = np.eye(6)
    # deterministic within-budget restarts when progress decays, e.g. a local
    # minimum or a configuration locked against a joint limit
    restart_rng = np.random.default_rng(0x1C5)
    best_pos = best_rot = math.inf
    best_score = math.inf
    best_q = q.copy()
    window = 40
    history: list[float] = []
    restarts = 0
    for _ in range(max_iters):
        _, m = _frames(chain, q)
        e_p = p_t - m[:3, 3]
        e_r = _rotvec_from_matrix(r_t @ m[:3, :3].T)
        pos_err, rot_err = float(np.linalg.norm(e_p)), float(np.linalg.norm(e_r))
        if pos_err < pos_tol and rot_err < rot_tol:
            return q
        score = pos_err + 0.3 * rot_err
        if score < best_score:
            best_score, best_pos, best_rot = score, pos_err, rot_err
            best_q = q.copy()
        history.append(score)
        if len(history) > window and history[-1] > 0.8 * history[-1 - window]:
            centers = (seed, (lo + hi) / 2.0, best_q)
            center = centers[restarts % 3]
            spread = 0.8 + 0.3 * restarts
            q = chain.clip_limits(center + restart_rng.uniform(-spread, spread, N_JOINTS))
            restarts += 1
            history = []
            continue
        jac = jacobian(chain, q)
        err = np.concatenate([e_p, e_r])
        # a joint pinned at a limit with its step pushing outward contributes
        # nothing; drop its column and let the remaining joints compensate
        for _pass in range(2):
            dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye6, err)
            pinned = ((q <= lo + 1e-9) & (dq < 0)) | ((q >= hi - 1e-9) & (dq > 0))
            if not pinned.any():
                break
            jac = jac.copy()
            jac[:, pinned] = 0.0
        biggest = float(np.max(np.abs(dq)))
        if biggest > step_limit:
            dq *= step_limit / biggest
        q = chain.clip_limits(q + dq)
    raise UnreachablePoseError(
        f"ik did not converge: residual {best_pos:.2e} m / {best_rot:.2e} rad",
        pos_residual=best_pos,
        rot_residual=best_rot,
    )


def default_chain() -> KinematicChain:
    from .network import packaged_config

    return KinematicChain.from_cfg(packaged_config("arm7.cfg"))
