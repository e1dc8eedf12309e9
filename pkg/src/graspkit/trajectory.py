"""Four-step table-top pick trajectory and its kinematic simulation.

The plan is: start at the home pose, move above the target at the transit
height, descend straight down to the grasp (closing the gripper), then carry
to the drop pose at table level (opening the gripper). Until the descend leg
begins, the tool must stay at or above the transit threshold (0.20 m default);
nothing may ever go below the table plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calibration import Pose7
from .errors import ExecutionAborted, SafetyError, UnreachablePoseError
from .kinematics import KinematicChain, fk, ik

SAFE_FACTOR = 0.20


@dataclass(frozen=True)
class TableGeom:
    table_z: float = 0.0
    transit_threshold: float = 0.20

    def __post_init__(self):
        if self.transit_threshold <= 0:
            raise SafetyError("transit threshold must be positive")


@dataclass(frozen=True)
class GraspObject:
    """Scene measurements at the grasp patch center: grasp depth below the
    transit plane reference and object height above the table."""

    depth_gpc: float
    height_gpc: float

    def __post_init__(self):
        if self.depth_gpc < 0 or self.height_gpc < 0:
            raise SafetyError("object measurements must be nonnegative")


@dataclass(frozen=True)
class Waypoint:
    pose: Pose7
    label: str
    gripper: str | None = None


def plan_trajectory(
    grasp_pose: Pose7, obj: GraspObject, table: TableGeom, home: Pose7
) -> list:
    """The four-waypoint safe plan.

    Descend distance is |threshold - (depth_gpc + sd)| with the safe distance
    sd = 0.20 * height_gpc, measured from the transit height.
    """
    if grasp_pose.z < table.table_z:
        raise SafetyError(f"grasp z {grasp_pose.z:.3f} lies below the table plane")
    transit_z = table.table_z + table.transit_threshold
    if home.z < transit_z:
        raise SafetyError(
            f"home z {home.z:.3f} starts below the transit threshold {transit_z:.3f}"
        )
    sd = SAFE_FACTOR * obj.height_gpc
    descend = abs(table.transit_threshold - (obj.depth_gpc + sd))
    grasp_z = transit_z - descend
    if grasp_z < table.table_z:
        raise SafetyError(f"descend target z {grasp_z:.3f} lies below the table plane")
    transit = Pose7(
        grasp_pose.x, grasp_pose.y, transit_z,
        grasp_pose.qx, grasp_pose.qy, grasp_pose.qz, grasp_pose.qw,
    )
    grasp = Pose7(
        grasp_pose.x, grasp_pose.y, grasp_z,
        grasp_pose.qx, grasp_pose.qy, grasp_pose.qz, grasp_pose.qw,
    )
    drop = Pose7(home.x, home.y, table.table_z, home.qx, home.qy, home.qz, home.qw)
    return [
        Waypoint(home, "home"),
        Waypoint(transit, "transit"),
        Waypoint(grasp, "descend", gripper="close"),
        Waypoint(drop, "return", gripper="open"),
    ]


@dataclass(eq=False)
class ExecutionLog:
    records: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    joint_solutions: list = field(default_factory=list)
    success: bool = False

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")


def simulate_execution(
    chain: KinematicChain,
    waypoints: list,
    table: TableGeom,
    steps_per_segment: int = 50,
    z_tol: float = 1e-3,
) -> ExecutionLog:
    """Solve IK per waypoint, interpolate joints linearly, and audit the path.

    Every interpolation step is checked against the table plane; steps in
    segments before the descend waypoint are also checked against the transit
    threshold. ``z_tol`` absorbs the IK convergence tolerance so exact-height
    waypoints do not self-flag. Raises ExecutionAborted (carrying the partial
    log) when IK fails on a waypoint.
    """
    log = ExecutionLog()
    q_prev = np.array(chain.home, dtype=float)
    solutions = []
    for wp in waypoints:
        try:
            q_prev = ik(chain, wp.pose, q_prev)
        except UnreachablePoseError:
            try:
                # continuation seed can start in an awkward posture; fall back
                # to the canonical ready posture before giving up
                q_prev = ik(chain, wp.pose)
            except UnreachablePoseError as e:
                log.success = False
                raise ExecutionAborted(
                    f"ik failed at waypoint {wp.label!r}: {e}", log=log
                ) from e
        solutions.append(q_prev)
    log.joint_solutions = [q.tolist() for q in solutions]

    descend_at = next(
        (i for i, wp in enumerate(waypoints) if wp.label == "descend"), len(waypoints)
    )
    t = 0
    for seg in range(len(waypoints) - 1):
        q_a, q_b = solutions[seg], solutions[seg + 1]
        arriving = waypoints[seg + 1]
        for s in range(1, steps_per_segment + 1):
            q = q_a + (q_b - q_a) * (s / steps_per_segment)
            pose = fk(chain, q)
            flags = []
            if pose.z < table.table_z - z_tol:
                flags.append("below_table")
            if seg + 1 < descend_at and pose.z < table.table_z + table.transit_threshold - z_tol:
                flags.append("below_transit_threshold")
            rec = {
                "t": t,
                "segment": seg,
                "label": arriving.label,
                "joints": [float(v) for v in q],
                "pose": [float(v) for v in pose.as_vector()],
                "flags": flags,
            }
            if s == steps_per_segment and arriving.gripper:
                rec["gripper"] = arriving.gripper
            log.records.append(rec)
            log.flags.extend(flags)
            t += 1
    log.success = not log.flags
    return log
