from __future__ import annotations

import math

import numpy as np
import pytest

from graspkit.calibration import (
    MappingMatrix,
    ObservationSet,
    Pose7,
    apply_mapping,
    fit_mapping,
    make_t_star,
    pose_from_grasp,
    rpy_to_quaternion,
    synth_observations,
)
from graspkit.errors import (
    DegenerateObservationsError,
    FormatError,
    GeometryError,
    MappingDegenerateError,
)
from graspkit.geometry import GraspPose2D
from oracles import scipy_quat_xyzw


def identity_pose(x=0.0, y=0.0, z=0.0):
    return Pose7(x, y, z, 0.0, 0.0, 0.0, 1.0)


class TestPose7:
    def test_unit_norm_enforced(self):
        with pytest.raises(GeometryError):
            Pose7(0, 0, 0, 0.5, 0.5, 0.5, 0.6)

    def test_sign_canonicalization(self):
        p = Pose7(0, 0, 0, 0.0, 0.0, -1.0, 0.0)
        assert p.qz == 1.0
        n = Pose7(0, 0, 0, -0.6, 0.0, 0.0, -0.8)
        assert (n.qx, n.qw) == (0.6, 0.8)

    def test_vector_round_trip(self):
        p = Pose7(0.1, -0.2, 0.3, *rpy_to_quaternion(0.3, -0.2, 1.1))
        q = Pose7.from_vector(p.as_vector())
        assert np.allclose(p.as_vector(), q.as_vector(), atol=0)

    def test_from_vector_normalizes_on_request(self):
        vec = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]
        with pytest.raises(GeometryError):
            Pose7.from_vector(vec)
        p = Pose7.from_vector(vec, normalize=True)
        assert p.qw == 1.0

    def test_degenerate_quaternion_rejected(self):
        with pytest.raises(MappingDegenerateError):
            Pose7.from_vector([0, 0, 0, 0, 0, 0, 1e-9], normalize=True)


class TestRpyToQuaternion:
    def test_matches_scipy_extrinsic_xyz(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            r, p, y = rng.uniform(-math.pi, math.pi, size=3)
            ours = rpy_to_quaternion(r, p, y)
            ref = scipy_quat_xyzw(r, p, y)
            if ref[3] < 0:
                ref = -ref
            assert np.allclose(ours, ref, atol=1e-12)

    def test_downward_facing_closed_form(self):
        # roll pi plus yaw theta: (cos t/2, sin t/2, 0, 0)
        for theta in np.linspace(-math.pi, math.pi, 100):
            q = rpy_to_quaternion(math.pi, 0.0, theta)
            want = np.array([math.cos(theta / 2.0), math.sin(theta / 2.0), 0.0, 0.0])
            if want[0] < 0:
                want = -want
            assert np.allclose(q, want, atol=1e-12)

    def test_identity(self):
        assert np.allclose(rpy_to_quaternion(0, 0, 0), [0, 0, 0, 1], atol=0)

    def test_non_finite_rejected(self):
        with pytest.raises(GeometryError):
            rpy_to_quaternion(float("nan"), 0, 0)


class TestPoseFromGrasp:
    INTR = {"fx": 525.0, "fy": 525.0, "cx": 16.0, "cy": 16.0}

    def test_principal_point_maps_to_axis(self):
        g = GraspPose2D(u=16.0, v=16.0, angle=0.0, width=10.0)
        pose = pose_from_grasp(g, 0.5, self.INTR)
        assert (pose.x, pose.y, pose.z) == (0.0, 0.0, 0.5)

    def test_pinhole_back_projection(self):
        g = GraspPose2D(u=68.5, v=16.0, angle=0.0, width=10.0)
        pose = pose_from_grasp(g, 0.5, self.INTR)
        assert pose.x == pytest.approx((68.5 - 16.0) * 0.5 / 525.0)
        assert pose.y == 0.0

    def test_orientation_downward_with_grasp_yaw(self):
        g = GraspPose2D(u=16.0, v=16.0, angle=0.7, width=10.0)
        pose = pose_from_grasp(g, 0.4, self.INTR)
        want = rpy_to_quaternion(math.pi, 0.0, 0.7)
        assert np.allclose(pose.quaternion(), want, atol=1e-12)

    def test_invalid_inputs_rejected(self):
        g = GraspPose2D(u=16.0, v=16.0, angle=0.0, width=10.0)
        with pytest.raises(GeometryError):
            pose_from_grasp(g, 0.0, self.INTR)
        with pytest.raises(GeometryError):
            pose_from_grasp(g, 0.5, {"fx": -1.0, "fy": 525.0, "cx": 0, "cy": 0})


class TestObservationSet:
    def test_empty_rejected(self):
        with pytest.raises(FormatError):
            ObservationSet([])

    def test_duplicate_pairs_warn(self):
        pair = (identity_pose(0.1), identity_pose(0.2))
        with pytest.warns(UserWarning, match="duplicate"):
            ObservationSet([pair, pair])

    def test_matrix_shapes(self):
        obs = synth_observations(make_t_star(), n_positions=3)
        assert obs.camera_matrix().shape == (7, 12)
        assert obs.robot_matrix().shape == (7, 12)
        assert len(obs) == 12

    def test_csv_round_trip_exact(self, tmp_path):
        obs = synth_observations(make_t_star(), n_positions=4)
        path = tmp_path / "obs.csv"
        obs.to_csv(path)
        back = ObservationSet.from_csv(path)
        assert np.array_equal(back.camera_matrix(), obs.camera_matrix())
        # positions survive bit-exactly; quaternions are renormalized on
        # read, which may move the last ulp
        got, want = back.robot_matrix(), obs.robot_matrix()
        assert np.array_equal(got[:3], want[:3])
        assert np.abs(got[3:] - want[3:]).max() < 1e-15

    def test_csv_header_and_arity_validated(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("bogus\n")
        with pytest.raises(FormatError, match="header"):
            ObservationSet.from_csv(path)
        path.write_text(
            "cx,cy,cz,cqx,cqy,cqz,cqw,rx,ry,rz,rqx,rqy,rqz,rqw\n1,2,3\n"
        )
        with pytest.raises(FormatError, match="14 values"):
            ObservationSet.from_csv(path)


class TestMappingMatrix:
    def test_shape_validated(self):
        with pytest.raises(FormatError):
            MappingMatrix(np.zeros((6, 7)))
        with pytest.raises(FormatError):
            MappingMatrix(np.full((7, 7), np.nan))

    def test_json_round_trip(self, tmp_path):
        m = MappingMatrix(make_t_star(3))
        path = tmp_path / "map.json"
        m.to_json(path)
        back = MappingMatrix.from_json(path)
        assert np.array_equal(back.T, m.T)


class TestFit:
    def test_exact_recovery_from_noiseless_protocol(self):
        t_star = make_t_star(0)
        obs = synth_observations(t_star, n_positions=10)
        fitted = fit_mapping(obs)
        assert np.abs(fitted.T - t_star).max() < 1e-9

    def test_held_out_residual(self):
        t_star = make_t_star(1)
        fitted = fit_mapping(synth_observations(t_star, n_positions=10, seed=0))
        held_out = synth_observations(t_star, n_positions=5, seed=99)
        for cam, rob in held_out.pairs:
            mapped = apply_mapping(fitted, cam)
            assert np.abs(mapped.as_vector() - rob.as_vector()).max() < 1e-9

    def test_noisy_fit_no_worse_than_truth(self):
        t_star = make_t_star(2)
        obs = synth_observations(t_star, n_positions=10, seed=3)
        rng = np.random.default_rng(4)
        noisy_pairs = []
        for cam, rob in obs.pairs:
            vec = rob.as_vector() + rng.normal(scale=1e-3, size=7)
            noisy_pairs.append((cam, Pose7.from_vector(vec, normalize=True)))
        noisy = ObservationSet(noisy_pairs)
        fitted = fit_mapping(noisy)
        c, r = noisy.camera_matrix(), noisy.robot_matrix()
        res_fit = np.linalg.norm(fitted.T @ c - r)
        res_star = np.linalg.norm(t_star @ c - r)
        assert res_fit <= res_star + 1e-12

    def test_fixed_orientation_protocol_is_degenerate(self):
        # every observation shares one quaternion: rank cannot reach 7
        t_star = make_t_star(5)
        q = rpy_to_quaternion(math.pi, 0.0, 0.0)
        rng = np.random.default_rng(6)
        pairs = []
        for _ in range(12):
            cam = Pose7(*rng.uniform(0.2, 0.6, size=3), *q)
            pairs.append((cam, Pose7.from_vector(t_star @ cam.as_vector())))
        with pytest.raises(DegenerateObservationsError) as err:
            fit_mapping(ObservationSet(pairs))
        assert err.value.rank < 7

    def test_too_few_observations_rejected(self):
        t_star = make_t_star(7)
        obs = synth_observations(t_star, n_positions=10)
        small = ObservationSet(obs.pairs[:6])
        with pytest.raises(DegenerateObservationsError):
            fit_mapping(small)

    def test_apply_mapping_renormalizes(self):
        m = MappingMatrix(np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]))
        out = apply_mapping(m, identity_pose(0.3))
        assert np.linalg.norm(out.quaternion()) == pytest.approx(1.0, abs=1e-12)

    def test_apply_mapping_rejects_quaternion_collapse(self):
        t = np.eye(7)
        t[3:, 3:] = 0.0
        m = MappingMatrix(t)
        with pytest.raises(MappingDegenerateError):
            apply_mapping(m, identity_pose())
