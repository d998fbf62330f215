import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memctx.errors import FormatError, InvalidArgument, InvalidPose
from memctx.geometry import (
    CameraTrajectory,
    Intrinsics,
    Pose,
    compose,
    default_intrinsics,
    flatten_extrinsics,
    format_trajectory,
    in_fov,
    parse_trajectory,
    project,
    read_trajectory,
    relative_pose,
    rot_z,
    sample_sphere,
    unflatten_extrinsics,
    visible_mask,
    write_trajectory,
)

from helpers import SQUARE, random_intrinsics, random_pose, random_trajectory
from oracles import project_3x4, relative_pose_4x4, sphere_points_loop, visible_loop

seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestRelativePose:
    def test_self_reference_is_identity(self):
        p = random_pose(np.random.default_rng(1))
        rel = relative_pose(p, p)
        np.testing.assert_allclose(rel.rotation, np.eye(3), atol=1e-12)
        assert np.array_equal(rel.translation, np.zeros(3))

    def test_identity_reference_leaves_pose_unchanged(self):
        p = Pose(rot_z(math.pi / 2), [1.0, 0.0, 0.0])
        assert relative_pose(p, Pose.identity()) == p

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_homogeneous_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p, ref = random_pose(rng, 3.0), random_pose(rng, 3.0)
        rel = relative_pose(p, ref)
        R, t = relative_pose_4x4(p.rotation, p.translation, ref.rotation, ref.translation)
        np.testing.assert_allclose(rel.rotation, R, atol=1e-9)
        np.testing.assert_allclose(rel.translation, t, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(seeds)
    def test_compose_recovers_pose(self, seed):
        rng = np.random.default_rng(seed)
        p, ref = random_pose(rng, 2.0), random_pose(rng, 2.0)
        back = compose(ref, relative_pose(p, ref))
        np.testing.assert_allclose(back.rotation, p.rotation, atol=1e-9)
        np.testing.assert_allclose(back.translation, p.translation, atol=1e-9)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidPose):
            Pose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
        with pytest.raises(InvalidPose):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection


class TestProject:
    def test_optical_axis_hits_principal_point(self):
        assert project([0, 0, 1], SQUARE, Pose.identity()) == (128.0, 128.0)

    def test_behind_camera_is_absent(self):
        assert project([0, 0, -1], SQUARE, Pose.identity()) is None
        assert project([0.3, 0.2, 0.0], SQUARE, Pose.identity()) is None

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_projection_matrix_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        intr, pose = random_intrinsics(rng), random_pose(rng)
        for _ in range(20):
            p = rng.normal(size=3) * 3
            got = project(p, intr, pose)
            want = project_3x4(p, intr.fx, intr.fy, intr.cx, intr.cy, pose.rotation, pose.translation)
            if want is None:
                assert got is None
            else:
                np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.floats(min_value=0.01, max_value=100.0))
    def test_depth_scale_invariance(self, seed, lam):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        xc = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.1, 2)])
        p1 = pose.translation + pose.rotation.T @ xc
        p2 = pose.translation + pose.rotation.T @ (lam * xc)
        u1, u2 = project(p1, SQUARE, pose), project(p2, SQUARE, pose)
        np.testing.assert_allclose(u1, u2, atol=1e-9)


class TestInFov:
    def test_principal_axis_visible(self):
        assert in_fov([0, 0, 5], SQUARE, Pose.identity())

    def test_behind_not_visible(self):
        assert not in_fov([0, 0, -5], SQUARE, Pose.identity())

    def test_half_open_bounds(self):
        # x/z = 1 lands on u = 256 = width exactly; x/z = -1 lands on u = 0
        assert not in_fov([1.0, 0.0, 1.0], SQUARE, Pose.identity())
        assert in_fov([-1.0, 0.0, 1.0], SQUARE, Pose.identity())
        assert not in_fov([0.0, 1.0, 1.0], SQUARE, Pose.identity())
        assert in_fov([0.0, -1.0, 1.0], SQUARE, Pose.identity())

    def test_zero_size_image_sees_nothing(self):
        blind = Intrinsics(128, 128, 128, 128, 0, 0)
        assert not in_fov([0, 0, 1], blind, Pose.identity())

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(0, 200), st.integers(0, 200))
    def test_monotone_in_image_size(self, seed, dw, dh):
        rng = np.random.default_rng(seed)
        intr, pose = random_intrinsics(rng), random_pose(rng)
        bigger = Intrinsics(intr.fx, intr.fy, intr.cx, intr.cy, intr.width + dw, intr.height + dh)
        pts = rng.normal(size=(200, 3)) * 2
        small = visible_mask(pts, intr, pose)
        large = visible_mask(pts, bigger, pose)
        assert not np.any(small & ~large)

    @pytest.mark.parametrize("seed", range(5))
    def test_vectorised_mask_matches_loop(self, seed):
        rng = np.random.default_rng(seed)
        intr, pose = random_intrinsics(rng), random_pose(rng)
        pts = sample_sphere(36, 72).points
        got = np.flatnonzero(visible_mask(pts, intr, pose)).tolist()
        want = visible_loop(pts, intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, pose.rotation, pose.translation)
        assert got == want


class TestSphere:
    def test_full_budget(self):
        assert sample_sphere(180, 360, 1.0).points.shape == (64_800, 3)

    def test_degenerate_grid(self):
        g = sample_sphere(1, 1, 1.0)
        assert g.points.shape == (1, 3)
        np.testing.assert_allclose(g.points[0], [1.0, 0.0, 0.0], atol=1e-15)

    def test_mean_is_zero(self):
        np.testing.assert_allclose(sample_sphere(180, 360, 1.0).points.mean(axis=0), 0.0, atol=1e-6)

    @pytest.mark.parametrize("shape", [(1, 1, 1.0), (7, 13, 2.5), (36, 72, 1.0), (180, 360, 0.3)])
    def test_count_norm_and_order(self, shape):
        g = sample_sphere(*shape)
        assert g.size == shape[0] * shape[1] == len(g.points)
        np.testing.assert_allclose(np.linalg.norm(g.points, axis=1), shape[2], atol=1e-9)
        np.testing.assert_allclose(g.points, sphere_points_loop(*shape), atol=1e-12)
        assert g.index(shape[0] - 1, shape[1] - 1) == g.size - 1

    def test_reproducible(self):
        assert np.array_equal(sample_sphere(36, 72).points, sample_sphere(36, 72).points)

    @pytest.mark.parametrize("bad", [(0, 10, 1.0), (10, 0, 1.0), (10, 10, 0.0), (10, 10, -1.0)])
    def test_rejects_bad_arguments(self, bad):
        with pytest.raises(InvalidArgument):
            sample_sphere(*bad)

    def test_visibility_is_radius_invariant_for_centred_camera(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            intr, pose = random_intrinsics(rng), Pose(random_pose(rng).rotation, np.zeros(3))
            a = visible_mask(sample_sphere(36, 72, 1.0).points, intr, pose)
            b = visible_mask(sample_sphere(36, 72, 2.0).points, intr, pose)
            assert np.array_equal(a, b)


class TestExtrinsics:
    def test_identity_row(self):
        traj = CameraTrajectory(((SQUARE, Pose.identity()),))
        assert flatten_extrinsics(traj).tolist() == [[1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]]

    def test_81_frames(self):
        traj = random_trajectory(np.random.default_rng(0), 81)
        assert flatten_extrinsics(traj).shape == (81, 12)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_exact(self, seed):
        traj = random_trajectory(np.random.default_rng(seed), 17)
        back = unflatten_extrinsics(flatten_extrinsics(traj), traj.frames[0][0])
        assert back == traj


class TestTrajectoryFile:
    def test_round_trip(self, tmp_path):
        traj = random_trajectory(np.random.default_rng(3), 12)
        write_trajectory(traj, tmp_path / "a.traj")
        assert read_trajectory(tmp_path / "a.traj") == traj

    def test_comments_and_default_intrinsics(self):
        text = """
        # header comment
        1 0 0 0 1 0 0 0 1 0 0 0   # extrinsics only
        128 128 128 128 256 256 1 0 0 0 1 0 0 0 1 0.5 0 0
        """
        traj = parse_trajectory(text, default=default_intrinsics(832, 480))
        assert len(traj) == 2
        assert traj.heterogeneous
        assert traj.frames[0][0] == Intrinsics(480, 480, 416, 240, 832, 480)
        assert traj.frames[1][1].translation.tolist() == [0.5, 0, 0]

    @pytest.mark.parametrize(
        "text",
        ["", "# only a comment\n", "1 2 3\n", "128 128 128 128 256 256 1 0 0 0 1 0 0 0 2 0 0 0\n", "a b c\n"],
    )
    def test_rejects_malformed(self, text):
        with pytest.raises(FormatError):
            parse_trajectory(text)

    def test_format_is_deterministic(self):
        traj = random_trajectory(np.random.default_rng(4), 3)
        assert format_trajectory(traj) == format_trajectory(traj)

    def test_homogeneous_intrinsics_required_unless_flagged(self):
        other = Intrinsics(1, 1, 0, 0, 10, 10)
        with pytest.raises(InvalidArgument):
            CameraTrajectory(((SQUARE, Pose.identity()), (other, Pose.identity())))
        CameraTrajectory(((SQUARE, Pose.identity()), (other, Pose.identity())), heterogeneous=True)
