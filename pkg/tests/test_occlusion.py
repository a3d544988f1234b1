"""Backward flows, cycle composition, and occlusion masks.

Oracle facts used below:
* Flows store absolute coordinates, so warping is out[q] = src[flow[q]]
  and the identity grid warps any image to itself.
* For a rigid shift s the pair F_nr[q] = q + s, F_rn[q] = q - s composes
  to the identity exactly: integer translations survive bilinear sampling
  bit for bit, and affine fields are interpolated exactly as well.
* A perturbation of (3, 4) pixels produces a cycle residual of exactly 5,
  pinning the inclusive >= threshold comparison.
* Out-of-frame round trips count toward neither side of the occluded-area
  fraction: with 36 of 1296 crop pixels invalid and 3 perturbed, the
  fraction is exactly 3/1260.
* Composed synthetic flows break the residual bound only where bilinear
  support straddles a layer boundary, so violations must localize next to
  ground-truth occlusions.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from layermesh.errors import ConventionMismatch, ShapeMismatch
from layermesh.occlusion import (
    BACKWARD,
    FORWARD,
    FlowField,
    backward_warp,
    coordinate_grid,
    cycle_residual,
    from_offsets,
    occlusion_mask,
    read_flow,
    write_flow,
)

from conftest import ramp_image


def _shift_pair(height, width, sx, sy):
    """Consistent flow pair for content rigidly shifted by (sx, sy)."""
    offsets = np.zeros((height, width, 2))
    offsets[..., 0] = sx
    offsets[..., 1] = sy
    forward = from_offsets(offsets)
    backward = from_offsets(-offsets)
    return backward, forward


class TestFlowField:
    def test_shape_validation(self):
        with pytest.raises(ShapeMismatch):
            FlowField(np.zeros((4, 5, 3)))

    def test_direction_validation(self):
        with pytest.raises(ConventionMismatch):
            FlowField(np.zeros((4, 5, 2)), "sideways")

    def test_valid_mask_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            FlowField(np.zeros((4, 5, 2)), BACKWARD, np.ones((5, 4), dtype=bool))

    def test_non_finite_rejected_only_where_valid(self):
        coords = np.zeros((3, 3, 2))
        coords[1, 1] = np.nan
        with pytest.raises(ShapeMismatch):
            FlowField(coords)
        valid = np.ones((3, 3), dtype=bool)
        valid[1, 1] = False
        flow = FlowField(coords, BACKWARD, valid)
        assert not flow.valid[1, 1]

    def test_offsets_inverts_from_offsets(self):
        rng = np.random.default_rng(0)
        offsets = rng.uniform(-3.0, 3.0, size=(6, 7, 2))
        flow = from_offsets(offsets)
        np.testing.assert_allclose(flow.offsets(), offsets, atol=1e-12)


class TestCoordinateGrid:
    def test_stores_own_coordinates(self):
        grid = coordinate_grid(6, 9)
        np.testing.assert_array_equal(grid.coords[5, 3], [3.0, 5.0])
        for y in range(6):
            for x in range(9):
                assert tuple(grid.coords[y, x]) == (x, y)
        assert grid.valid.all()

    def test_single_pixel_grid(self):
        grid = coordinate_grid(1, 1)
        np.testing.assert_array_equal(grid.coords[0, 0], [0.0, 0.0])

    def test_identity_warp(self):
        rng = np.random.default_rng(1)
        image = rng.uniform(size=(6, 9, 3))
        warped, valid = backward_warp(image, coordinate_grid(6, 9))
        np.testing.assert_array_equal(warped, image)
        assert valid.all()


class TestBackwardWarp:
    def test_constant_shift_moves_ramp(self):
        image = ramp_image(8, 12)
        offsets = np.zeros((8, 12, 2))
        offsets[..., 0] = -5.0
        warped, valid = backward_warp(image, from_offsets(offsets))
        assert not valid[:, :5].any()
        assert valid[:, 5:].all()
        xs = np.arange(12, dtype=np.float64)
        expected = np.broadcast_to(xs - 5.0, (8, 12))
        np.testing.assert_allclose(warped[:, 5:, 0], expected[:, 5:], atol=1e-12)

    def test_out_of_bounds_flagged_invalid(self):
        coords = np.full((4, 4, 2), 99.0)
        warped, valid = backward_warp(np.ones((4, 4)), FlowField(coords))
        assert not valid.any()
        np.testing.assert_array_equal(warped, 0.0)

    def test_forward_flow_rejected(self):
        flow = FlowField(np.zeros((4, 4, 2)), FORWARD)
        with pytest.raises(ConventionMismatch):
            backward_warp(np.ones((4, 4)), flow)

    def test_flow_source_invalidity_propagates(self):
        grid = coordinate_grid(6, 8)
        src_valid = np.ones((6, 8), dtype=bool)
        src_valid[:, 3] = False
        src = FlowField(grid.coords, BACKWARD, src_valid)
        composed = backward_warp(src, coordinate_grid(6, 8))
        np.testing.assert_array_equal(composed.valid, src_valid)
        assert composed.coords[0, 4, 0] == 4.0


class TestCycleResidual:
    def test_rigid_shift_composes_to_identity(self):
        flow_rn, flow_nr = _shift_pair(10, 16, 5.0, 0.0)
        residual, valid = cycle_residual(flow_rn, flow_nr)
        assert valid[:, : 16 - 5].all()
        assert not valid[:, 16 - 5 :].any()
        np.testing.assert_array_equal(residual[valid], 0.0)
        assert np.isinf(residual[~valid]).all()

    def test_similarity_transform_composes_to_identity(self):
        # affine coordinate fields interpolate exactly, so the lemma holds
        # to rounding error for rotation + scale + shift pairs
        height, width = 40, 50
        angle, scale = 0.1, 1.02
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        shift = np.array([3.7, -2.2])
        grid = coordinate_grid(height, width).coords
        fwd = grid @ (scale * rot).T + shift
        inv = (grid - shift) @ np.linalg.inv(scale * rot).T
        residual, valid = cycle_residual(FlowField(inv), FlowField(fwd))
        assert valid.sum() > 1000
        assert residual[valid].max() < 1e-9

    def test_perturbation_localizes(self):
        flow_rn, flow_nr = _shift_pair(12, 15, 2.0, 1.0)
        coords = flow_nr.coords.copy()
        coords[5, 8] += np.array([3.0, 4.0])
        residual, valid = cycle_residual(flow_rn, FlowField(coords))
        assert residual[5, 8] == 5.0
        hits = np.argwhere(valid & (residual > 1e-9))
        np.testing.assert_array_equal(hits, [[5, 8]])

    def test_convention_and_shape_checks(self):
        back = coordinate_grid(4, 4)
        fwd = FlowField(np.zeros((4, 4, 2)), FORWARD)
        with pytest.raises(ConventionMismatch):
            cycle_residual(back, fwd)
        with pytest.raises(ConventionMismatch):
            cycle_residual(fwd, back)
        with pytest.raises(ShapeMismatch):
            cycle_residual(back, coordinate_grid(4, 5))

    def test_single_layer_scene_flows_are_consistent(self):
        from layermesh.scenegen import SceneSpec, generate, ground_truth_views

        scene = generate(1, SceneSpec(layer_count=1, height=48, width=64, profiles=("tilted",)))
        views = ground_truth_views(scene)
        assert not views.occluded_r.any()
        residual, valid = cycle_residual(views.flow_rn, views.flow_nr)
        assert valid.sum() > 2000
        assert residual[valid].max() < 1e-9

    def test_layered_scene_violations_hug_layer_boundaries(self, small_scene, small_views):
        residual, valid = cycle_residual(small_views.flow_rn, small_views.flow_nr)
        co_visible = small_views.co_visible_r()
        sel = co_visible & valid
        clean = residual[sel] < 1e-6
        assert clean.mean() > 0.95
        # pixels that do break the bound sit where the bilinear support of
        # the composition straddles a visible-layer discontinuity
        vis = np.argmax(small_scene.textures[..., 3] >= 0.5, axis=0)
        edges = np.zeros(vis.shape, dtype=bool)
        edges[:, 1:] |= vis[:, 1:] != vis[:, :-1]
        edges[:, :-1] |= vis[:, 1:] != vis[:, :-1]
        edges[1:, :] |= vis[1:, :] != vis[:-1, :]
        edges[:-1, :] |= vis[1:, :] != vis[:-1, :]
        boundary = binary_dilation(
            edges | small_views.occluded_r | ~valid | ~small_views.known_r, iterations=3
        )
        breakers = sel & (residual >= 1e-6)
        assert breakers.sum() > 0
        assert (breakers & ~boundary).sum() == 0


class TestOcclusionMask:
    def test_consistent_flows_give_empty_mask(self):
        flow_rn, flow_nr = _shift_pair(40, 44, 2.0, 0.0)
        result = occlusion_mask(flow_rn, flow_nr, threshold=1.0, margin=4)
        assert result.fraction == 0.0
        assert not result.mask.any()
        assert result.threshold == 1.0
        assert result.margin == 4

    def test_threshold_comparison_is_inclusive(self):
        flow_rn, flow_nr = _shift_pair(40, 44, 0.0, 0.0)
        coords = flow_nr.coords.copy()
        coords[20, 22] += np.array([3.0, 4.0])
        bumped = FlowField(coords)
        at = occlusion_mask(flow_rn, bumped, threshold=5.0, margin=4)
        assert at.mask[20 - 4, 22 - 4]
        above = occlusion_mask(flow_rn, bumped, threshold=5.000001, margin=4)
        assert not above.mask.any()

    def test_margin_excludes_border_band(self):
        flow_rn, flow_nr = _shift_pair(40, 44, 0.0, 0.0)
        coords = flow_nr.coords.copy()
        coords[2, 2] += np.array([3.0, 4.0])
        result = occlusion_mask(flow_rn, FlowField(coords), threshold=1.0, margin=4)
        assert result.fraction == 0.0
        assert not result.mask.any()

    def test_invalid_pixels_leave_numerator_and_denominator(self):
        flow_rn, flow_nr = _shift_pair(40, 40, 0.0, 0.0)
        coords = flow_nr.coords.copy()
        coords[12:18, 12:18] = -50.0
        coords[30, 30] += np.array([3.0, 4.0])
        coords[31, 8] += np.array([0.0, 2.0])
        coords[5, 25] += np.array([2.0, 0.0])
        result = occlusion_mask(flow_rn, FlowField(coords), threshold=1.0, margin=2)
        assert result.valid.sum() == 36 * 36 - 36
        assert result.mask.sum() == 3
        assert result.fraction == 3 / 1260

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        noise = np.clip(rng.normal(0.0, 1.0, size=(40, 40, 2)), -3.0, 3.0)
        flow_nr = from_offsets(noise)
        flow_rn = coordinate_grid(40, 40)
        masks = [
            occlusion_mask(flow_rn, flow_nr, threshold=eps, margin=4).mask
            for eps in (0.3, 0.7, 1.5)
        ]
        assert masks[0].any() and not masks[0].all()
        assert not (masks[1] & ~masks[0]).any()
        assert not (masks[2] & ~masks[1]).any()

    def test_margin_validation(self):
        flow_rn, flow_nr = _shift_pair(20, 20, 0.0, 0.0)
        with pytest.raises(ShapeMismatch):
            occlusion_mask(flow_rn, flow_nr, margin=-1)
        with pytest.raises(ShapeMismatch):
            occlusion_mask(flow_rn, flow_nr, margin=10)

    def test_layered_scene_mask_matches_ground_truth(self, small_views):
        result = occlusion_mask(small_views.flow_rn, small_views.flow_nr, threshold=1.0, margin=8)
        crop = (slice(8, 40), slice(8, 56))
        truth = small_views.occluded_r[crop]
        np.testing.assert_array_equal(result.mask, truth & result.valid)
        assert truth.sum() > 20
        recall = (result.mask & truth).sum() / truth.sum()
        assert recall >= 0.95
        assert abs(result.fraction - truth.mean()) <= 0.02


class TestFlowIo:
    def test_roundtrip_preserves_coordinates_and_validity(self, tmp_path):
        rng = np.random.default_rng(3)
        coords = rng.integers(0, 64, size=(6, 8, 2)).astype(np.float64) + 0.5
        valid = rng.uniform(size=(6, 8)) < 0.8
        coords[~valid] = 0.0
        flow = FlowField(coords, BACKWARD, valid)
        path = tmp_path / "flow.pfm"
        write_flow(path, flow)
        back = read_flow(path)
        assert back.direction == BACKWARD
        np.testing.assert_array_equal(back.coords, coords)
        np.testing.assert_array_equal(back.valid, valid)

    def test_direction_tag_is_callers_choice(self, tmp_path):
        flow = coordinate_grid(5, 5)
        path = tmp_path / "flow.pfm"
        write_flow(path, flow)
        assert read_flow(path, FORWARD).direction == FORWARD
