"""Grasp representations in image space.

A grasp is a center pixel, a rotation angle, an opening width and a jaw size.
Angles are pi-periodic (a gripper rotated by pi grips identically), so every
angle is folded into (-pi/2, pi/2] and regression targets carry the doubled
angle as a (cos 2phi, sin 2phi) pair, which is continuous across the fold.

Coordinates: u is the image column, v the row, origin at the top left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GeometryError

HALF_PI = math.pi / 2.0


def normalize_angle(theta: float) -> float:
    """Fold an angle into (-pi/2, pi/2] under the theta == theta + pi symmetry."""
    if not math.isfinite(theta):
        raise GeometryError(f"angle must be finite, got {theta!r}")
    a = math.fmod(theta, math.pi)
    if a > HALF_PI:
        a -= math.pi
    elif a <= -HALF_PI:
        a += math.pi
    return a


def angle_diff(a: float, b: float) -> float:
    """Smallest separation of two pi-periodic angles, in [0, pi/2]."""
    d = abs(normalize_angle(a) - normalize_angle(b))
    return min(d, math.pi - d)


@dataclass(frozen=True)
class GraspPose2D:
    """A grasp in image coordinates.

    ``width`` is the gripper opening along the grasp axis, ``height`` the jaw
    size perpendicular to it (defaults to width/2). ``no_grasp`` marks the
    placeholder returned when a quality map is entirely zero.
    """

    u: float
    v: float
    angle: float
    width: float
    height: float | None = None
    quality: float = 1.0
    no_grasp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "angle", normalize_angle(self.angle))
        if self.height is None:
            object.__setattr__(self, "height", self.width / 2.0)
        if not (self.width > 0 and self.height > 0):
            raise GeometryError(
                f"width and height must be positive, got {self.width}, {self.height}"
            )
        if not 0.0 <= self.quality <= 1.0:
            raise GeometryError(f"quality must lie in [0, 1], got {self.quality}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "u": self.u,
                "v": self.v,
                "angle": self.angle,
                "width": self.width,
                "height": self.height,
                "quality": self.quality,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GraspPose2D":
        d = json.loads(text)
        return cls(d["u"], d["v"], d["angle"], d["width"], d["height"], d["quality"])


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True, eq=False)
class GraspRect:
    """An oriented grasp rectangle: 4 counterclockwise vertices, (u, v) pixels.

    The first edge (vertex 0 to vertex 1) runs along the grasp axis, so its
    length is the gripper opening and the second edge is the jaw size.
    """

    vertices: np.ndarray
    _PARALLEL_TOL = 1e-6

    def __post_init__(self):
        pts = np.asarray(self.vertices, dtype=float)
        if pts.shape != (4, 2) or not np.all(np.isfinite(pts)):
            raise GeometryError("a grasp rectangle needs 4 finite 2-D vertices")
        object.__setattr__(self, "vertices", pts)
        if _signed_area(pts) <= 0:
            raise GeometryError("vertices must wind counterclockwise with area > 0")
        e = np.roll(pts, -1, axis=0) - pts
        lens = np.linalg.norm(e, axis=1)
        if np.any(lens <= 0):
            raise GeometryError("degenerate rectangle: zero-length edge")
        u = e / lens[:, None]
        for i in (0, 1):
            sin_dev = abs(u[i, 0] * u[i + 2, 1] - u[i, 1] * u[i + 2, 0])
            if sin_dev > self._PARALLEL_TOL:
                raise GeometryError(
                    f"opposite edges deviate from parallel by {sin_dev:.2e} rad"
                )

    @classmethod
    def from_points(cls, pts, first_edge: str = "width", repair: bool = False) -> "GraspRect":
        """Build from 4 points in either winding order.

        ``first_edge`` names what the edge p0->p1 represents in the source data:
        ``"width"`` (grasp axis, our canonical order) or ``"plate"`` (a gripper
        jaw line, the Cornell file convention). ``repair`` snaps a slightly
        non-rectangular quadrilateral to the nearest true rectangle.
        """
        pts = np.asarray(pts, dtype=float).reshape(4, 2)
        if first_edge not in ("width", "plate"):
            raise GeometryError(f"unknown first_edge {first_edge!r}")
        if first_edge == "plate":
            pts = np.roll(pts, -1, axis=0)
        if _signed_area(pts) < 0:
            pts = pts[::-1].copy()
        if repair:
            center = pts.mean(axis=0)
            e0 = pts[1] - pts[0]
            angle = math.atan2(e0[1], e0[0])
            width = 0.5 * (np.linalg.norm(pts[1] - pts[0]) + np.linalg.norm(pts[2] - pts[3]))
            height = 0.5 * (np.linalg.norm(pts[2] - pts[1]) + np.linalg.norm(pts[3] - pts[0]))
            return rect_from_grasp(
                GraspPose2D(center[0], center[1], angle, width, height)
            )
        return cls(pts)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    def to_list(self) -> list:
        return [[float(x), float(y)] for x, y in self.vertices]


def rect_from_grasp(g: GraspPose2D) -> GraspRect:
    """Oriented rectangle centered at the grasp: long axis at g.angle, length g.width."""
    ca, sa = math.cos(g.angle), math.sin(g.angle)
    axis = np.array([ca, sa])
    jaw = np.array([-sa, ca])
    c = np.array([g.u, g.v])
    hw, hh = 0.5 * g.width, 0.5 * g.height
    return GraspRect(
        np.stack(
            [
                c - hw * axis - hh * jaw,
                c + hw * axis - hh * jaw,
                c + hw * axis + hh * jaw,
                c - hw * axis + hh * jaw,
            ]
        )
    )


def grasp_from_rect(rect: GraspRect, quality: float = 1.0) -> GraspPose2D:
    """Recover center/angle/width/height from a rectangle (inverse of rect_from_grasp)."""
    pts = rect.vertices
    c = pts.mean(axis=0)
    e_w = pts[1] - pts[0]
    e_h = pts[2] - pts[1]
    return GraspPose2D(
        u=float(c[0]),
        v=float(c[1]),
        angle=math.atan2(e_w[1], e_w[0]),
        width=float(np.linalg.norm(e_w)),
        height=float(np.linalg.norm(e_h)),
        quality=quality,
    )


def _clip_polygon(subject: list, edge_a: np.ndarray, edge_b: np.ndarray) -> list:
    """Keep the part of a convex polygon left of the directed edge a->b."""
    out = []
    n = len(subject)
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        d = edge_b - edge_a
        side_p = d[0] * (p[1] - edge_a[1]) - d[1] * (p[0] - edge_a[0])
        side_q = d[0] * (q[1] - edge_a[1]) - d[1] * (q[0] - edge_a[0])
        if side_p >= 0:
            out.append(p)
            if side_q < 0:
                t = side_p / (side_p - side_q)
                out.append(p + t * (q - p))
        elif side_q >= 0:
            t = side_p / (side_p - side_q)
            out.append(p + t * (q - p))
    return out


def _polygon_area(pts: list) -> float:
    if len(pts) < 3:
        return 0.0
    return abs(_signed_area(np.asarray(pts)))


def intersection_area(a: GraspRect, b: GraspRect) -> float:
    """Exact area of the convex intersection of two rectangles."""
    poly = [p for p in a.vertices]
    bv = b.vertices
    for i in range(4):
        poly = _clip_polygon(poly, bv[i], bv[(i + 1) % 4])
        if not poly:
            return 0.0
    return _polygon_area(poly)


def iou(a: GraspRect, b: GraspRect) -> float:
    """Intersection over union of two grasp rectangles via convex clipping."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


@dataclass(eq=False)
class GraspMaps:
    """Pixel-wise grasp maps: quality, doubled-angle pair, and opening width.

    Q lies in [0, 1], cos2phi/sin2phi in [-1, 1], W is nonnegative pixels.
    The exposed angle map is phi = 0.5 * atan2(sin2phi, cos2phi).
    """

    Q: np.ndarray
    cos2phi: np.ndarray
    sin2phi: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in (self.Q, self.cos2phi, self.sin2phi, self.W)}
        if len(shapes) != 1 or self.Q.ndim != 2:
            raise GeometryError(f"all four maps must share one HxW shape, got {shapes}")

    @property
    def shape(self) -> tuple:
        return self.Q.shape

    def phi(self) -> np.ndarray:
        p = 0.5 * np.arctan2(self.sin2phi, self.cos2phi)
        p[p <= -HALF_PI] += math.pi
        return p


def grasp_from_maps(maps: GraspMaps, smooth_sigma: float = 2.0) -> GraspPose2D:
    """Best grasp at the argmax of the (optionally smoothed) quality map.

    ``smooth_sigma`` > 0 applies a Gaussian blur before the argmax to suppress
    speckle maxima; 0 uses the raw map. Ties break at the smallest (v, u).
    An all-zero Q yields a ``no_grasp`` placeholder at the image center.
    """
    if smooth_sigma < 0:
        raise GeometryError(f"smooth_sigma must be >= 0, got {smooth_sigma}")
    h, w = maps.shape
    if not np.any(maps.Q > 0):
        return GraspPose2D(
            u=w // 2, v=h // 2, angle=0.0, width=1.0, quality=0.0, no_grasp=True
        )
    q = ndimage.gaussian_filter(maps.Q, smooth_sigma) if smooth_sigma > 0 else maps.Q
    v, u = np.unravel_index(int(np.argmax(q)), q.shape)
    angle = 0.5 * math.atan2(float(maps.sin2phi[v, u]), float(maps.cos2phi[v, u]))
    width = max(float(maps.W[v, u]), 1e-3)
    quality = float(np.clip(maps.Q[v, u], 0.0, 1.0))
    return GraspPose2D(u=float(u), v=float(v), angle=angle, width=width, quality=quality)
