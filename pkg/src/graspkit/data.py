"""Dataset handling: Cornell-format ingestion, target rasterization, splits,
augmentation, and a synthetic desk-scale dataset with analytic ground truth."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, FormatError, GeometryError
from .geometry import (
    GraspMaps,
    GraspPose2D,
    GraspRect,
    grasp_from_rect,
    normalize_angle,
    rect_from_grasp,
)

W_MAX = 150.0

TargetMaps = GraspMaps

_MIN_SIDE = 64
_MARGIN = 0.1


@dataclass(eq=False)
class Scene:
    """One image with its positive (and optional negative) grasp rectangles."""

    image: np.ndarray
    positive_rects: list
    negative_rects: list
    id: str

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3:
            raise FormatError(f"scene {self.id}: image must be HxWx3, got {img.shape}")
        h, w = img.shape[:2]
        if h < _MIN_SIDE or w < _MIN_SIDE:
            raise FormatError(f"scene {self.id}: image must be at least {_MIN_SIDE}px per side")
        self.image = img
        for rect in list(self.positive_rects) + list(self.negative_rects):
            pts = rect.vertices
            if (
                pts[:, 0].min() < -_MARGIN * w
                or pts[:, 0].max() > (1.0 + _MARGIN) * w
                or pts[:, 1].min() < -_MARGIN * h
                or pts[:, 1].max() > (1.0 + _MARGIN) * h
            ):
                raise FormatError(
                    f"scene {self.id}: rectangle vertices exceed the image margin"
                )

    @property
    def shape(self) -> tuple:
        return self.image.shape[:2]


@dataclass(frozen=True)
class SplitSpec:
    ratio: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"split ratio must lie in (0, 1], got {self.ratio}")


def _read_rect_file(path: Path, first_edge: str, repair: bool) -> tuple[list, int]:
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) % 4 != 0:
        raise FormatError(f"{path}: vertex line count {len(lines)} is not divisible by 4")
    rects, skipped = [], 0
    for i in range(0, len(lines), 4):
        quad = []
        for ln in lines[i : i + 4]:
            parts = ln.split()
            if len(parts) != 2:
                raise FormatError(f"{path}: expected 'x y' per line, got {ln!r}")
            quad.append([float(parts[0]), float(parts[1])])
        quad = np.array(quad)
        if not np.all(np.isfinite(quad)):
            skipped += 1
            continue
        rects.append(GraspRect.from_points(quad, first_edge=first_edge, repair=repair))
    return rects, skipped


def load_cornell_scene(
    image_path, pos_path, neg_path=None, repair: bool = True
) -> Scene:
    """Load one Cornell-layout scene: pcdXXXXr.png plus cpos/cneg vertex files.

    Annotation files hold 4 'x y' lines per rectangle, the first edge tracing a
    gripper plate. Rectangles containing NaN vertices are skipped with a warning.
    """
    image_path, pos_path = Path(image_path), Path(pos_path)
    if not image_path.exists():
        raise IOError(f"image file not found: {image_path}")
    if not pos_path.exists():
        raise IOError(f"annotation file not found: {pos_path}")
    img = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
    pos, skipped = _read_rect_file(pos_path, first_edge="plate", repair=repair)
    neg = []
    if neg_path is not None and Path(neg_path).exists():
        neg, neg_skipped = _read_rect_file(Path(neg_path), first_edge="plate", repair=repair)
        skipped += neg_skipped
    if skipped:
        warnings.warn(f"{pos_path.name}: skipped {skipped} rectangle(s) with NaN vertices")
    return Scene(img, pos, neg, id=image_path.stem)


def load_cornell_dir(root, limit: int | None = None) -> list:
    """Load every pcd*r.png / pcd*cpos.txt pair under a directory tree."""
    root = Path(root)
    scenes = []
    for pos_path in sorted(root.rglob("pcd*cpos.txt")):
        stem = pos_path.name[: -len("cpos.txt")]
        image_path = pos_path.with_name(stem + "r.png")
        neg_path = pos_path.with_name(stem + "cneg.txt")
        if not image_path.exists():
            continue
        scenes.append(load_cornell_scene(image_path, pos_path, neg_path))
        if limit is not None and len(scenes) >= limit:
            break
    if not scenes:
        raise IOError(f"no Cornell-layout scenes found under {root}")
    return scenes


def center_crop_resize(scene: Scene, size: int) -> Scene:
    """Square center crop followed by a uniform resize, applied to image and rectangles."""
    h, w = scene.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    img = scene.image[top : top + side, left : left + side]
    scale = size / side
    if size != side:
        pil = Image.fromarray((img * 255).astype(np.uint8))
        img = np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.float32) / 255.0

    def map_rect(rect):
        pts = (rect.vertices - np.array([left, top])) * scale
        return GraspRect(pts)

    def keep(rect):
        pts = (rect.vertices - np.array([left, top])) * scale
        return (
            pts[:, 0].min() >= -_MARGIN * size
            and pts[:, 0].max() <= (1 + _MARGIN) * size
            and pts[:, 1].min() >= -_MARGIN * size
            and pts[:, 1].max() <= (1 + _MARGIN) * size
        )

    pos = [map_rect(r) for r in scene.positive_rects if keep(r)]
    neg = [map_rect(r) for r in scene.negative_rects if keep(r)]
    return Scene(img, pos, neg, id=scene.id)


def rasterize_targets(scene: Scene, out_h: int, out_w: int) -> TargetMaps:
    """Training targets from positive rectangles.

    For each rectangle the central third along the grasp axis (full jaw extent)
    is painted with Q=1, the doubled-angle pair, and the opening width clipped
    to W_MAX; later rectangles overwrite earlier ones, all else stays zero.
    """
    h, w = scene.shape
    if out_h > h or out_w > w:
        raise ConfigError(f"target dims {out_h}x{out_w} exceed image dims {h}x{w}")
    scale = out_h / h
    if abs(out_w / w - scale) > 1e-9:
        raise ConfigError("target dims must scale the image uniformly")
    q = np.zeros((out_h, out_w), dtype=np.float32)
    cos2 = np.zeros_like(q)
    sin2 = np.zeros_like(q)
    wm = np.zeros_like(q)
    uu, vv = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    for rect in scene.positive_rects:
        g = grasp_from_rect(rect)
        cu, cv = g.u * scale, g.v * scale
        width, height = g.width * scale, g.height * scale
        ca, sa = math.cos(g.angle), math.sin(g.angle)
        du, dv = uu - cu, vv - cv
        along = du * ca + dv * sa
        across = -du * sa + dv * ca
        mask = (np.abs(along) <= width / 6.0) & (np.abs(across) <= height / 2.0)
        q[mask] = 1.0
        cos2[mask] = math.cos(2.0 * g.angle)
        sin2[mask] = math.sin(2.0 * g.angle)
        wm[mask] = min(width, W_MAX)
    return TargetMaps(q, cos2, sin2, wm)


def split_by_ratio(scenes: list, spec: SplitSpec) -> tuple[list, list]:
    """Deterministic image-wise split: floor(ratio*N) labelled, rest stripped of labels."""
    if not scenes:
        raise ConfigError("cannot split an empty scene list")
    n = len(scenes)
    n1 = math.floor(spec.ratio * n)
    if n1 == 0:
        raise ConfigError(
            f"ratio {spec.ratio} of {n} scenes leaves no labelled scene; need at least 1"
        )
    order = np.random.default_rng(spec.seed).permutation(n)
    labelled = [scenes[i] for i in order[:n1]]
    unlabelled = [
        replace(scenes[i], positive_rects=[], negative_rects=[]) for i in order[n1:]
    ]
    return labelled, unlabelled


def augment(scene: Scene, rotation: float, zoom: float, crop_offset=(0.0, 0.0)) -> Scene:
    """Shared affine transform of image and rectangles.

    Points map as p' = c + R(-rotation) (p - c - offset) / zoom around the
    pixel-grid center c; rectangles falling fully outside the frame (or past
    the allowed margin) are dropped.
    """
    if not 0.5 <= zoom <= 1.0:
        raise GeometryError(f"zoom must lie in [0.5, 1.0], got {zoom}")
    if not math.isfinite(rotation):
        raise GeometryError("rotation must be finite")
    h, w = scene.shape
    cu, cv = (w - 1) / 2.0, (h - 1) / 2.0
    ox, oy = float(crop_offset[0]), float(crop_offset[1])
    ca, sa = math.cos(rotation), math.sin(rotation)

    # forward map for annotation points, in (u, v)
    fwd = np.array([[ca, sa], [-sa, ca]]) / zoom

    # image resampling needs the inverse map, expressed in (row, col) order
    inv_vu = zoom * np.array([[ca, sa], [-sa, ca]])
    center_vu = np.array([cv, cu])
    offset_vu = center_vu + np.array([oy, ox]) - inv_vu @ center_vu
    img = np.stack(
        [
            ndimage.affine_transform(
                scene.image[:, :, c], inv_vu, offset=offset_vu, order=1, mode="nearest"
            )
            for c in range(3)
        ],
        axis=2,
    )

    def map_rect(rect):
        pts = (rect.vertices - np.array([cu + ox, cv + oy])) @ fwd.T + np.array([cu, cv])
        return GraspRect(pts if _ccw(pts) else pts[::-1].copy())

    def _ccw(pts):
        x, y = pts[:, 0], pts[:, 1]
        return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)) > 0

    def keep(rect):
        pts = rect.vertices
        inside_any = np.any(
            (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)
        )
        in_margin = (
            pts[:, 0].min() >= -_MARGIN * w
            and pts[:, 0].max() <= (1 + _MARGIN) * w
            and pts[:, 1].min() >= -_MARGIN * h
            and pts[:, 1].max() <= (1 + _MARGIN) * h
        )
        return inside_any and in_margin

    pos = [r for r in map(map_rect, scene.positive_rects) if keep(r)]
    neg = [r for r in map(map_rect, scene.negative_rects) if keep(r)]
    return Scene(img, pos, neg, id=scene.id)


def _object_scene(
    h, w, center, length, thickness, angle, fg, bg, scene_id, shape
) -> Scene:
    """Solid bar or ellipse on a plain background with analytic grasps.

    Grasps sit on the long axis, rotated a quarter turn from it, opening wide
    enough to clear the object thickness.
    """
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    ca, sa = math.cos(angle), math.sin(angle)
    du, dv = uu - center[0], vv - center[1]
    along = du * ca + dv * sa
    across = -du * sa + dv * ca
    if shape == "bar":
        mask = (np.abs(along) <= length / 2.0) & (np.abs(across) <= thickness / 2.0)
    elif shape == "ellipse":
        mask = (along / (length / 2.0)) ** 2 + (across / (thickness / 2.0)) ** 2 <= 1.0
    else:
        raise ConfigError(f"unknown synthetic shape {shape!r}")
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = np.asarray(bg, dtype=np.float32)
    img[mask] = np.asarray(fg, dtype=np.float32)

    grasp_angle = normalize_angle(angle + math.pi / 2.0)
    grasp_width = 1.6 * thickness
    offsets = (-0.15, 0.0, 0.15) if shape == "bar" else (-0.1, 0.0, 0.1)
    rects = []
    for t in offsets:
        gu = center[0] + t * length * ca
        gv = center[1] + t * length * sa
        rects.append(rect_from_grasp(GraspPose2D(gu, gv, grasp_angle, grasp_width)))
    return Scene(img, rects, [], id=scene_id)


def make_bar_scene(h, w, center, length, thickness, angle, fg, bg, scene_id="bar") -> Scene:
    return _object_scene(h, w, center, length, thickness, angle, fg, bg, scene_id, "bar")


def make_ellipse_scene(
    h, w, center, length, thickness, angle, fg, bg, scene_id="ellipse"
) -> Scene:
    return _object_scene(h, w, center, length, thickness, angle, fg, bg, scene_id, "ellipse")


def synth_dataset(n: int, seed: int, h: int = 64, w: int = 64) -> list:
    """Deterministic synthetic scenes: one random bar or ellipse per image."""
    if n < 1:
        raise ConfigError(f"need n >= 1 scenes, got {n}")
    rng = np.random.default_rng(seed)
    side = min(h, w)
    scenes = []
    for i in range(n):
        shape = "bar" if rng.random() < 0.5 else "ellipse"
        angle = rng.uniform(-math.pi / 2, math.pi / 2)
        length = rng.uniform(0.38, 0.55) * side
        thickness = rng.uniform(0.14, 0.22) * side
        center = (
            w / 2.0 + rng.uniform(-0.1, 0.1) * w,
            h / 2.0 + rng.uniform(-0.1, 0.1) * h,
        )
        bg = rng.uniform(0.05, 0.35, size=3)
        fg = np.clip(bg + rng.uniform(0.4, 0.6, size=3), 0.0, 1.0)
        scenes.append(
            _object_scene(h, w, center, length, thickness, angle, fg, bg, f"synth-{i:04d}", shape)
        )
    return scenes


def export_scenes(scenes: list, out_dir) -> None:
    """One directory per scene: image.png plus grasps.json with both rect lists."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        d = out_dir / scene.id
        d.mkdir(parents=True, exist_ok=True)
        Image.fromarray((scene.image * 255.0).round().astype(np.uint8)).save(d / "image.png")
        payload = {
            "positive": [r.to_list() for r in scene.positive_rects],
            "negative": [r.to_list() for r in scene.negative_rects],
        }
        (d / "grasps.json").write_text(json.dumps(payload, indent=1))


def load_scene_dir(root) -> list:
    """Load scenes exported by export_scenes."""
    root = Path(root)
    scenes = []
    for meta in sorted(root.glob("*/grasps.json")):
        img_path = meta.parent / "image.png"
        if not img_path.exists():
            raise IOError(f"missing image for {meta.parent}")
        img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        payload = json.loads(meta.read_text())
        pos = [GraspRect(np.array(pts)) for pts in payload["positive"]]
        neg = [GraspRect(np.array(pts)) for pts in payload["negative"]]
        scenes.append(Scene(img, pos, neg, id=meta.parent.name))
    if not scenes:
        raise IOError(f"no exported scenes found under {root}")
    return scenes
