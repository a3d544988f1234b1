"""Plane placement and plane sweep warps.

Oracle values used below:
* place_planes(1, 8, 3): inverse depths interpolate 1 .. 0.125, so the
  middle plane is 1 / ((1 + 0.125) / 2) = 1 / 0.5625 = 1.77777...
* Pure x-translation t_x with identity rotation shifts every pixel on the
  plane z = d by the disparity fx * t_x / d; with fx = 100, t_x = 0.1,
  d = 10 that is exactly 1 pixel.
* With fx = 60, baseline 0.5, d = 10 the disparity is the integer 3 px,
  so a side view made by shifting the reference is matched exactly.
"""

from __future__ import annotations

import numpy as np
import pytest

from layermesh.core import CameraIntrinsics, CameraRig, PosedCamera, RigidPose
from layermesh.errors import InvalidRange, NonPositiveDepth, TooFewPlanes
from layermesh.psv import (
    PlaneStack,
    _warp_coords_homography,
    _warp_coords_reproject,
    build_psv,
    place_planes,
    plane_homography,
    warp_side_to_plane,
)
from tests.conftest import identity_rig, make_rig, ramp_image


class TestPlacePlanes:
    def test_two_planes_are_the_endpoints(self):
        stack = place_planes(1.0, 100.0, 2)
        np.testing.assert_array_equal(stack.depths, [1.0, 100.0])

    def test_three_planes_midpoint_in_inverse_depth(self):
        stack = place_planes(1.0, 8.0, 3)
        np.testing.assert_allclose(stack.depths, [1.0, 1.0 / 0.5625, 8.0], rtol=1e-12)
        assert stack.depths[0] == 1.0 and stack.depths[-1] == 8.0

    def test_inverse_depths_are_arithmetic(self):
        stack = place_planes(0.7, 123.0, 32)
        inv = 1.0 / stack.depths
        steps = np.diff(inv)
        assert np.abs(steps - steps[0]).max() < 1e-9
        assert np.all(np.diff(stack.depths) > 0)

    def test_rejects_degenerate_range(self):
        with pytest.raises(InvalidRange):
            place_planes(2.0, 2.0, 4)
        with pytest.raises(InvalidRange):
            place_planes(-1.0, 2.0, 4)

    def test_rejects_single_plane(self):
        with pytest.raises(TooFewPlanes):
            place_planes(1.0, 8.0, 1)

    def test_stack_rejects_unsorted_depths(self):
        with pytest.raises(InvalidRange):
            PlaneStack(np.array([1.0, 3.0, 2.0]))


class TestWarpSideToPlane:
    def test_identity_rig_reproduces_side_view(self):
        rig = identity_rig(width=10, height=8)
        rng = np.random.default_rng(0)
        side = rng.uniform(size=(8, 10, 3))
        for depth in (0.5, 3.0, 40.0):
            warped, valid = warp_side_to_plane(side, rig, depth)
            assert valid.all()
            np.testing.assert_allclose(warped, side, atol=1e-9)

    def test_translation_shifts_by_disparity(self):
        intr = CameraIntrinsics(100.0, 100.0, 16.0, 8.0, 32, 16)
        side_pose = RigidPose(np.eye(3), np.array([0.1, 0.0, 0.0]))
        rig = CameraRig(intr, PosedCamera(intr, side_pose), PosedCamera(intr, RigidPose.identity()))
        side = ramp_image(16, 32)
        warped, valid = warp_side_to_plane(side, rig, 10.0)
        xs = np.arange(32, dtype=np.float64)[None, :].repeat(16, axis=0)
        assert valid[:, :-1].all()
        assert not valid[:, -1].any()
        np.testing.assert_allclose(warped[valid][:, 0], (xs + 1.0)[valid], atol=1e-9)

    def test_rejects_nonpositive_depth(self):
        rig = make_rig()
        side = np.zeros((48, 64, 3))
        with pytest.raises(NonPositiveDepth):
            warp_side_to_plane(side, rig, -1.0)
        with pytest.raises(NonPositiveDepth):
            plane_homography(rig, 0.0)

    def test_homography_matches_reprojection(self):
        rng = np.random.default_rng(42)
        out_size = (12, 16)
        for _ in range(100):
            f = rng.uniform(20.0, 200.0)
            intr = CameraIntrinsics(f, f * rng.uniform(0.9, 1.1), 7.5, 5.5, 16, 12)
            axis = rng.standard_normal(3)
            angle = rng.uniform(-0.2, 0.2)
            t = rng.uniform(-0.3, 0.3, size=3)
            pose = RigidPose.from_axis_angle(axis, angle, t)
            rig = CameraRig(intr, PosedCamera(intr, pose), PosedCamera(intr, RigidPose.identity()))
            depth = rng.uniform(1.0, 50.0)
            a = _warp_coords_homography(rig, depth, out_size)
            b = _warp_coords_reproject(rig, depth, out_size)
            assert np.abs(a - b).max() < 1e-6

    def test_zero_baseline_keeps_all_pixels_valid(self):
        rig = identity_rig(width=20, height=14)
        side = np.zeros((14, 20, 3))
        _, valid = warp_side_to_plane(side, rig, 2.5)
        assert valid.all()


class TestBuildPsv:
    def test_identity_rig_slabs_equal_side(self):
        rig = identity_rig(width=9, height=7)
        rng = np.random.default_rng(5)
        reference = rng.uniform(size=(7, 9, 3))
        side = rng.uniform(size=(7, 9, 3))
        psv = build_psv(reference, side, rig, place_planes(1.0, 10.0, 2))
        assert psv.slabs.shape == (2, 7, 9, 3)
        for k in range(2):
            np.testing.assert_allclose(psv.slabs[k], side, atol=1e-9)
        np.testing.assert_array_equal(psv.reference, reference)

    def test_slab_order_follows_plane_order(self):
        intr = CameraIntrinsics(60.0, 60.0, 16.0, 8.0, 32, 16)
        pose = RigidPose(np.eye(3), np.array([-0.5, 0.0, 0.0]))
        rig = CameraRig(intr, PosedCamera(intr, pose), PosedCamera(intr, RigidPose.identity()))
        side = ramp_image(16, 32)
        planes = place_planes(5.0, 20.0, 3)
        psv = build_psv(np.zeros((16, 32, 3)), side, rig, planes)
        for k, d in enumerate(planes.depths):
            expected, valid = warp_side_to_plane(side, rig, float(d))
            np.testing.assert_array_equal(psv.slabs[k], expected)
            np.testing.assert_array_equal(psv.valid[k], valid)

    def test_plane_at_scene_depth_is_photoconsistent(self):
        # integer disparity: fx*b/d = 60 * 0.5 / 10 = 3 px exactly
        intr = CameraIntrinsics(60.0, 60.0, 16.0, 8.0, 32, 16)
        pose = RigidPose(np.eye(3), np.array([-0.5, 0.0, 0.0]))
        rig = CameraRig(intr, PosedCamera(intr, pose), PosedCamera(intr, RigidPose.identity()))
        rng = np.random.default_rng(11)
        reference = rng.uniform(size=(16, 32, 3))
        side = np.zeros_like(reference)
        side[:, :-3] = reference[:, 3:]  # side camera sees the plane 3 px left
        planes = PlaneStack(np.array([5.0, 10.0, 20.0]))
        psv = build_psv(reference, side, rig, planes)
        match = psv.valid[1]
        assert match.sum() > 200
        np.testing.assert_allclose(psv.slabs[1][match], reference[match], atol=1e-3)
        off = np.abs(psv.slabs[0][match] - reference[match]).mean()
        assert off > 0.05
