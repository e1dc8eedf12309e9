from __future__ import annotations

import math

import numpy as np
import pytest
from PIL import Image

from graspkit.data import (
    Scene,
    SplitSpec,
    augment,
    center_crop_resize,
    export_scenes,
    load_cornell_scene,
    load_scene_dir,
    make_bar_scene,
    rasterize_targets,
    split_by_ratio,
    synth_dataset,
)
from graspkit.errors import ConfigError, FormatError, GeometryError
from graspkit.geometry import (
    GraspPose2D,
    grasp_from_rect,
    normalize_angle,
    rect_from_grasp,
)
from oracles import affine_point, central_third_mask


def blank_scene(h=64, w=64, rects=(), neg=(), scene_id="s"):
    return Scene(
        np.zeros((h, w, 3), dtype=np.float32),
        list(rects),
        list(neg),
        id=scene_id,
    )


def write_cornell_pair(tmp_path, lines, name="pcd0100"):
    img = Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8))
    image_path = tmp_path / f"{name}r.png"
    img.save(image_path)
    pos_path = tmp_path / f"{name}cpos.txt"
    pos_path.write_text("\n".join(lines) + "\n")
    return image_path, pos_path


RECT_LINES = [
    "10.0 10.0",
    "30.0 10.0",
    "30.0 20.0",
    "10.0 20.0",
]


class TestCornellParsing:
    def test_eight_lines_two_rectangles(self, tmp_path):
        shifted = [f"{float(x.split()[0]) + 5} {float(x.split()[1]) + 12}" for x in RECT_LINES]
        image_path, pos_path = write_cornell_pair(tmp_path, RECT_LINES + shifted)
        scene = load_cornell_scene(image_path, pos_path)
        assert len(scene.positive_rects) == 2
        assert scene.negative_rects == []
        assert scene.id == "pcd0100r"

    def test_nan_rectangle_skipped_with_warning(self, tmp_path):
        lines = ["NaN NaN"] + RECT_LINES[1:]
        image_path, pos_path = write_cornell_pair(tmp_path, lines)
        with pytest.warns(UserWarning, match="skipped 1 rectangle"):
            scene = load_cornell_scene(image_path, pos_path)
        assert scene.positive_rects == []

    def test_line_count_not_divisible_by_four(self, tmp_path):
        image_path, pos_path = write_cornell_pair(tmp_path, RECT_LINES[:3])
        with pytest.raises(FormatError, match="cpos"):
            load_cornell_scene(image_path, pos_path)

    def test_malformed_line_rejected(self, tmp_path):
        lines = RECT_LINES[:3] + ["10.0 20.0 extra"]
        image_path, pos_path = write_cornell_pair(tmp_path, lines)
        with pytest.raises(FormatError, match="x y"):
            load_cornell_scene(image_path, pos_path)

    def test_missing_files_raise_io_error(self, tmp_path):
        image_path, pos_path = write_cornell_pair(tmp_path, RECT_LINES)
        with pytest.raises(IOError):
            load_cornell_scene(tmp_path / "nope.png", pos_path)
        with pytest.raises(IOError):
            load_cornell_scene(image_path, tmp_path / "nope.txt")

    def test_negative_file_parsed_when_present(self, tmp_path):
        image_path, pos_path = write_cornell_pair(tmp_path, RECT_LINES)
        neg_path = tmp_path / "pcd0100cneg.txt"
        neg_path.write_text("\n".join(RECT_LINES) + "\n")
        scene = load_cornell_scene(image_path, pos_path, neg_path)
        assert len(scene.negative_rects) == 1

    def test_image_scaled_to_unit_range(self, tmp_path):
        arr = np.full((64, 64, 3), 255, dtype=np.uint8)
        image_path = tmp_path / "pcd0101r.png"
        Image.fromarray(arr).save(image_path)
        pos_path = tmp_path / "pcd0101cpos.txt"
        pos_path.write_text("\n".join(RECT_LINES) + "\n")
        scene = load_cornell_scene(image_path, pos_path)
        assert scene.image.dtype == np.float32
        assert scene.image.max() == pytest.approx(1.0)


class TestRasterize:
    def test_no_rectangles_all_zero(self):
        maps = rasterize_targets(blank_scene(), 64, 64)
        for m in (maps.Q, maps.cos2phi, maps.sin2phi, maps.W):
            assert not m.any()

    def test_axis_aligned_matches_brute_force_oracle(self):
        g = GraspPose2D(u=32.0, v=32.0, angle=0.0, width=30.0, height=18.0)
        scene = blank_scene(rects=[rect_from_grasp(g)])
        maps = rasterize_targets(scene, 64, 64)
        oracle = central_third_mask(64, 64, (32.0, 32.0), 0.0, 30.0, 18.0)
        assert np.array_equal(maps.Q.astype(bool), oracle)
        assert np.all(maps.cos2phi[oracle] == pytest.approx(1.0))
        assert np.all(maps.sin2phi[oracle] == pytest.approx(0.0))
        assert np.all(maps.W[oracle] == pytest.approx(30.0))

    def test_rotated_matches_brute_force_oracle(self):
        for angle in (0.3, -0.7, 1.2):
            g = GraspPose2D(u=30.0, v=34.0, angle=angle, width=26.0, height=14.0)
            scene = blank_scene(rects=[rect_from_grasp(g)])
            maps = rasterize_targets(scene, 64, 64)
            oracle = central_third_mask(64, 64, (30.0, 34.0), angle, 26.0, 14.0)
            assert np.array_equal(maps.Q.astype(bool), oracle)

    def test_quarter_turn_doubled_angle(self):
        g = GraspPose2D(u=32.0, v=32.0, angle=math.pi / 2, width=30.0, height=18.0)
        scene = blank_scene(rects=[rect_from_grasp(g)])
        maps = rasterize_targets(scene, 64, 64)
        region = maps.Q.astype(bool)
        assert region.any()
        assert np.all(np.abs(maps.cos2phi[region] + 1.0) < 1e-6)
        assert np.all(np.abs(maps.sin2phi[region]) < 1e-6)

    def test_later_rectangle_overwrites(self):
        a = GraspPose2D(u=32.0, v=32.0, angle=0.0, width=30.0, height=18.0)
        b = GraspPose2D(u=32.0, v=32.0, angle=0.5, width=24.0, height=12.0)
        scene = blank_scene(rects=[rect_from_grasp(a), rect_from_grasp(b)])
        maps = rasterize_targets(scene, 64, 64)
        b_mask = central_third_mask(64, 64, (32.0, 32.0), 0.5, 24.0, 12.0)
        assert np.all(maps.W[b_mask] == pytest.approx(24.0))

    def test_width_clipped_to_150(self):
        g = GraspPose2D(u=128.0, v=128.0, angle=0.0, width=200.0, height=40.0)
        scene = blank_scene(h=256, w=256, rects=[rect_from_grasp(g)])
        maps = rasterize_targets(scene, 256, 256)
        assert maps.W.max() == pytest.approx(150.0)

    def test_downscaled_targets(self):
        g = GraspPose2D(u=64.0, v=64.0, angle=0.0, width=60.0, height=36.0)
        scene = blank_scene(h=128, w=128, rects=[rect_from_grasp(g)])
        maps = rasterize_targets(scene, 64, 64)
        oracle = central_third_mask(64, 64, (32.0, 32.0), 0.0, 30.0, 18.0)
        assert np.array_equal(maps.Q.astype(bool), oracle)

    def test_dims_exceeding_image_rejected(self):
        with pytest.raises(ConfigError):
            rasterize_targets(blank_scene(), 65, 65)


class TestSplit:
    def make_scenes(self, n):
        img = np.zeros((64, 64, 3), dtype=np.float32)
        rect = rect_from_grasp(GraspPose2D(u=32.0, v=32.0, angle=0.0, width=20.0, height=10.0))
        return [Scene(img, [rect], [], id=f"s{i}") for i in range(n)]

    def test_half_split_counts(self):
        labelled, unlabelled = split_by_ratio(self.make_scenes(10), SplitSpec(0.5, seed=3))
        assert len(labelled) == 5 and len(unlabelled) == 5

    def test_floor_rounding(self):
        labelled, unlabelled = split_by_ratio(self.make_scenes(885), SplitSpec(0.1, seed=0))
        assert len(labelled) == 88
        assert len(unlabelled) == 797

    def test_partition_is_exact(self):
        scenes = self.make_scenes(23)
        labelled, unlabelled = split_by_ratio(scenes, SplitSpec(0.3, seed=9))
        ids = sorted(s.id for s in labelled) + sorted(s.id for s in unlabelled)
        assert sorted(ids) == sorted(s.id for s in scenes)
        assert not set(s.id for s in labelled) & set(s.id for s in unlabelled)

    def test_same_seed_same_partition(self):
        scenes = self.make_scenes(20)
        a = split_by_ratio(scenes, SplitSpec(0.5, seed=11))
        b = split_by_ratio(scenes, SplitSpec(0.5, seed=11))
        assert [s.id for s in a[0]] == [s.id for s in b[0]]
        assert [s.id for s in a[1]] == [s.id for s in b[1]]

    def test_different_seed_usually_differs(self):
        scenes = self.make_scenes(40)
        a = split_by_ratio(scenes, SplitSpec(0.5, seed=1))
        b = split_by_ratio(scenes, SplitSpec(0.5, seed=2))
        assert [s.id for s in a[0]] != [s.id for s in b[0]]

    def test_unlabelled_annotations_dropped(self):
        _, unlabelled = split_by_ratio(self.make_scenes(10), SplitSpec(0.5, seed=3))
        for scene in unlabelled:
            assert scene.positive_rects == []
            assert scene.negative_rects == []

    def test_zero_labelled_rejected(self):
        with pytest.raises(ConfigError):
            split_by_ratio(self.make_scenes(5), SplitSpec(0.1, seed=0))

    def test_ratio_validation(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.0, seed=0)
        with pytest.raises(ConfigError):
            SplitSpec(1.2, seed=0)


class TestAugment:
    def scene_with_rect(self, angle=0.3):
        rng = np.random.default_rng(5)
        img = rng.uniform(0.0, 1.0, size=(64, 64, 3)).astype(np.float32)
        g = GraspPose2D(u=30.0, v=34.0, angle=angle, width=20.0, height=10.0)
        return Scene(img, [rect_from_grasp(g)], [], id="aug")

    def test_identity_parameters_leave_scene_unchanged(self):
        scene = self.scene_with_rect()
        out = augment(scene, rotation=0.0, zoom=1.0)
        assert np.allclose(out.image, scene.image, atol=1e-6)
        assert np.allclose(
            out.positive_rects[0].vertices, scene.positive_rects[0].vertices, atol=1e-9
        )

    def test_half_turn_maps_centers(self):
        scene = self.scene_with_rect()
        g0 = grasp_from_rect(scene.positive_rects[0])
        out = augment(scene, rotation=math.pi, zoom=1.0)
        g1 = grasp_from_rect(out.positive_rects[0])
        assert g1.u == pytest.approx(63.0 - g0.u, abs=1e-6)
        assert g1.v == pytest.approx(63.0 - g0.v, abs=1e-6)
        assert normalize_angle(g1.angle - g0.angle) == pytest.approx(0.0, abs=1e-9)

    def test_quarter_turn_on_square_image(self):
        scene = self.scene_with_rect()
        g0 = grasp_from_rect(scene.positive_rects[0])
        out = augment(scene, rotation=math.pi / 2, zoom=1.0)
        g1 = grasp_from_rect(out.positive_rects[0])
        assert g1.u == pytest.approx(g0.v, abs=1e-6)
        assert g1.v == pytest.approx(63.0 - g0.u, abs=1e-6)
        assert normalize_angle(g1.angle - (g0.angle + math.pi / 2)) == pytest.approx(
            0.0, abs=1e-9
        )

    def test_vertices_match_affine_oracle(self):
        scene = self.scene_with_rect()
        for rotation, zoom, offset in [
            (0.4, 0.8, (2.0, -3.0)),
            (-1.1, 0.6, (0.0, 0.0)),
            (math.pi / 2, 1.0, (1.5, 1.5)),
        ]:
            out = augment(scene, rotation=rotation, zoom=zoom, crop_offset=offset)
            if not out.positive_rects:
                continue
            got = out.positive_rects[0].vertices
            want = np.array(
                [
                    affine_point(p, (31.5, 31.5), offset, rotation, zoom)
                    for p in scene.positive_rects[0].vertices
                ]
            )
            # vertex cycle may be reversed to restore CCW order
            direct = np.abs(got - want).max()
            flipped = np.abs(got[::-1] - want).max()
            assert min(direct, flipped) < 1e-6

    def test_rectangle_outside_frame_dropped(self):
        img = np.zeros((64, 64, 3), dtype=np.float32)
        g = GraspPose2D(u=60.0, v=32.0, angle=0.0, width=8.0, height=6.0)
        scene = Scene(img, [rect_from_grasp(g)], [], id="edge")
        out = augment(scene, rotation=0.0, zoom=0.5, crop_offset=(-60.0, 0.0))
        assert out.positive_rects == []

    def test_zoom_out_of_range_rejected(self):
        scene = self.scene_with_rect()
        with pytest.raises(GeometryError):
            augment(scene, rotation=0.0, zoom=0.4)
        with pytest.raises(GeometryError):
            augment(scene, rotation=0.0, zoom=1.5)

    def test_image_follows_rectangles(self):
        # paint a bright patch at the rect center and check it lands where
        # the mapped rectangle center says it should
        scene = make_bar_scene(
            64, 64, center=(40.0, 28.0), length=26.0, thickness=10.0,
            angle=0.2, fg=(0.9, 0.9, 0.9), bg=(0.1, 0.1, 0.1),
        )
        out = augment(scene, rotation=0.9, zoom=0.75)
        g = grasp_from_rect(out.positive_rects[0])
        u, v = int(round(g.u)), int(round(g.v))
        assert out.image[v, u].mean() > 0.7


class TestSynthDataset:
    def test_cardinality_and_annotations(self):
        scenes = synth_dataset(1, seed=7)
        assert len(scenes) == 1
        assert len(scenes[0].positive_rects) >= 1

    def test_deterministic_in_seed(self):
        a = synth_dataset(4, seed=3)
        b = synth_dataset(4, seed=3)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert len(sa.positive_rects) == len(sb.positive_rects)
            for ra, rb in zip(sa.positive_rects, sb.positive_rects):
                assert np.array_equal(ra.vertices, rb.vertices)

    def test_bar_grasp_perpendicular_to_long_axis(self):
        scene = make_bar_scene(
            64, 64, center=(32.0, 32.0), length=60.0, thickness=12.0,
            angle=0.4, fg=(1.0, 1.0, 1.0), bg=(0.0, 0.0, 0.0),
        )
        g = grasp_from_rect(scene.positive_rects[0])
        assert angle_close(g.angle, normalize_angle(0.4 + math.pi / 2))

    def test_images_in_unit_range(self):
        for scene in synth_dataset(6, seed=1):
            assert scene.image.min() >= 0.0
            assert scene.image.max() <= 1.0
            assert scene.image.shape == (64, 64, 3)


def angle_close(a, b, tol=1e-6):
    return abs(normalize_angle(a - b)) < tol or abs(abs(normalize_angle(a - b)) - math.pi) < tol


class TestExportImport:
    def test_round_trip(self, tmp_path):
        scenes = synth_dataset(3, seed=2)
        export_scenes(scenes, tmp_path)
        back = load_scene_dir(tmp_path)
        assert [s.id for s in back] == [s.id for s in scenes]
        for orig, rt in zip(scenes, back):
            # PNG stores 8-bit channels
            assert np.abs(orig.image - rt.image).max() <= 1.0 / 255.0 + 1e-6
            assert len(rt.positive_rects) == len(orig.positive_rects)
            for ra, rb in zip(orig.positive_rects, rt.positive_rects):
                assert np.allclose(ra.vertices, rb.vertices, atol=1e-6)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(IOError):
            load_scene_dir(tmp_path)


class TestCenterCropResize:
    def test_output_shape_and_rect_scaling(self):
        img = np.zeros((100, 80, 3), dtype=np.float32)
        g = GraspPose2D(u=40.0, v=50.0, angle=0.0, width=20.0, height=10.0)
        scene = Scene(img, [rect_from_grasp(g)], [], id="crop")
        out = center_crop_resize(scene, 64)
        assert out.image.shape == (64, 64, 3)
        g2 = grasp_from_rect(out.positive_rects[0])
        # center column 40 survives the crop, width scales by 64/80
        assert g2.width == pytest.approx(20.0 * 64.0 / 80.0)

    def test_noop_when_already_square(self):
        scene = synth_dataset(1, seed=4)[0]
        out = center_crop_resize(scene, 64)
        assert np.array_equal(out.image, scene.image)
