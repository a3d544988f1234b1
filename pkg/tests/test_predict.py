"""Tests for the stand-in geometry and coloring predictors.

Oracle math used below:
  * matching cost: the box filter weights valid samples only, so a plane
    whose slab is constant 1.0 against a zero reference costs exactly 1,
    and garbage behind invalid samples never leaks into the average.
  * bi oracle: beta = (d_far - d)/(d_far - d_near) is the exact inverse of
    the linear blend d = beta*d_near + (1 - beta)*d_far.
  * gc oracle: opacities frac at the nearer and 1 at the farther bracketing
    plane composite to frac*d_a + (1 - frac)*d_b = d exactly.
  * sa oracle: log-weights at the two bracketing planes survive the softmax
    as the weights themselves, so the depth average returns the target.
  * photoconsistency: a textured fronto-parallel plane at depth d shifts by
    disparity fx*baseline/d between the views, so warping the side view at
    the true depth realigns it and the matching cost dips at that plane.
"""

import numpy as np
import pytest

from layermesh.aggregate import aggregate_bi, aggregate_gc, aggregate_sa
from layermesh.core import PosedCamera, RigidPose
from layermesh.errors import DepthOutOfRange, InvalidRange, SchemeShapeMismatch
from layermesh.predict import (
    ColoringPredictor,
    GeometryPredictor,
    matching_cost,
    predict_coloring_oracle,
    predict_coloring_passthrough,
    predict_geometry_constant,
    predict_geometry_oracle,
    predict_geometry_photoconsistency,
)
from layermesh.psv import PlaneStack, PlaneSweepVolume, build_psv, place_planes
from layermesh.render import render
from layermesh.scenegen import SceneSpec, generate, ground_truth_views, to_textured_scene
from layermesh.texture import blend_textures

from conftest import identity_rig, make_rig, ramp_image


def _manual_psv(planes, slabs, valid, reference):
    return PlaneSweepVolume(planes, np.asarray(slabs, float), np.asarray(valid, bool), np.asarray(reference, float))


def _all_valid_psv(planes, slabs, reference):
    slabs = np.asarray(slabs, dtype=np.float64)
    return _manual_psv(planes, slabs, np.ones(slabs.shape[:3], dtype=bool), reference)


class TestMatchingCost:
    def test_constant_difference_costs_exactly_that(self):
        planes = PlaneStack([1.0, 2.0])
        reference = np.zeros((6, 8, 3))
        slabs = np.stack([np.ones((6, 8, 3)), np.full((6, 8, 3), 0.5)])
        cost, ambiguous = matching_cost(_all_valid_psv(planes, slabs, reference), 2)
        assert cost.shape == (6, 8, 2)
        assert np.array_equal(cost[..., 0], np.ones((6, 8)))
        assert not ambiguous.any()

    def test_invalid_samples_never_leak(self):
        planes = PlaneStack([1.0, 2.0])
        reference = np.zeros((6, 9, 3))
        slabs = np.zeros((2, 6, 9, 3))
        valid = np.ones((2, 6, 9), dtype=bool)
        # plane 1: a clean strip on the left, garbage behind invalidity
        slabs[1, :, :3] = 0.6
        slabs[1, :, 3:] = 100.0
        valid[1, :, 3:] = False
        cost, ambiguous = matching_cost(_manual_psv(planes, slabs, valid, reference), 2)
        near_strip = cost[..., 1][:, :5]
        np.testing.assert_allclose(near_strip, 0.6, atol=1e-12)
        assert ambiguous[..., 1][:, 6:].all()
        assert not ambiguous[..., 0].any()

    def test_fully_invalid_plane_is_ambiguous_everywhere(self):
        planes = PlaneStack([1.0, 2.0])
        slabs = np.zeros((2, 5, 5, 3))
        valid = np.ones((2, 5, 5), dtype=bool)
        valid[0] = False
        cost, ambiguous = matching_cost(_manual_psv(planes, slabs, valid, np.zeros((5, 5, 3))), 2)
        assert ambiguous[..., 0].all()
        assert np.array_equal(cost[..., 0], np.zeros((5, 5)))

    def test_radius_zero_is_pointwise_channel_mean(self):
        planes = PlaneStack([1.0, 2.0])
        rng = np.random.default_rng(30)
        reference = rng.random((4, 6, 3))
        slabs = rng.random((2, 4, 6, 3))
        cost, _ = matching_cost(_all_valid_psv(planes, slabs, reference), 0)
        expected = np.abs(slabs - reference[None]).mean(axis=-1)
        np.testing.assert_allclose(cost, np.moveaxis(expected, 0, 2), atol=1e-15)


class TestPhotoconsistencyPredictor:
    def test_zero_baseline_gives_uniform_gc(self):
        rig = identity_rig(16, 12, focal=16.0)
        reference = ramp_image(12, 16) / 16.0
        psv = build_psv(reference, reference, rig, place_planes(1.0, 8.0, 4))
        volume = predict_geometry_photoconsistency(psv, "gc", 2)
        assert np.array_equal(volume.data, np.full((12, 16, 4), 0.5))

    def test_zero_baseline_gives_group_mean_bi(self):
        rig = identity_rig(16, 12, focal=16.0)
        reference = ramp_image(12, 16) / 16.0
        planes = place_planes(1.0, 8.0, 4)
        psv = build_psv(reference, reference, rig, planes)
        volume = predict_geometry_photoconsistency(psv, "bi", 2)
        means = planes.depths.reshape(2, 2).mean(axis=-1)
        expected = (planes.far - means) / (planes.far - planes.near)
        np.testing.assert_allclose(volume.data - expected[None, None, :], 0.0, atol=1e-15)

    def test_zero_baseline_sa_logits_equal_within_group(self):
        rig = identity_rig(16, 12, focal=16.0)
        reference = ramp_image(12, 16) / 16.0
        psv = build_psv(reference, reference, rig, place_planes(1.0, 8.0, 4))
        volume = predict_geometry_photoconsistency(psv, "sa", 2)
        data = volume.data
        assert data.shape == (12, 16, 2, 4)
        assert np.array_equal(data[..., 0, 0], data[..., 0, 1])
        assert np.array_equal(data[..., 1, 2], data[..., 1, 3])
        assert (data[..., 0, 2:] < -1e8).all()
        assert (data[..., 1, :2] < -1e8).all()

    def test_constant_color_scene_is_uniform_inside(self):
        rig = make_rig(32, 24, baseline=0.1)
        flat = np.full((24, 32, 3), 0.4)
        psv = build_psv(flat, flat, rig, place_planes(2.0, 8.0, 4))
        volume = predict_geometry_photoconsistency(psv, "gc", 2)
        interior = volume.data[5:-5, 5:-5]
        assert np.array_equal(interior, np.full(interior.shape, 0.5))

    def test_no_valid_samples_fall_back_to_uniform(self):
        planes = place_planes(1.0, 8.0, 4)
        slabs = np.zeros((4, 6, 7, 3))
        valid = np.zeros((4, 6, 7), dtype=bool)
        psv = _manual_psv(planes, slabs, valid, np.zeros((6, 7, 3)))
        gc = predict_geometry_photoconsistency(psv, "gc", 2)
        assert np.array_equal(gc.data, np.full((6, 7, 4), 0.5))
        bi = predict_geometry_photoconsistency(psv, "bi", 2)
        means = planes.depths.reshape(2, 2).mean(axis=-1)
        expected = (planes.far - means) / (planes.far - planes.near)
        np.testing.assert_allclose(bi.data - expected[None, None, :], 0.0, atol=1e-15)

    def test_textured_plane_wins_argmin_at_its_depth(self):
        spec = SceneSpec(
            layer_count=1, height=64, width=64, baseline=0.7, profiles=("constant",), patterns=("noise",)
        )
        scene = generate(5, spec)
        depth = scene.surfaces[0]["offset"]
        views = ground_truth_views(scene)
        planes = PlaneStack(depth * np.array([0.45, 0.65, 1.0, 1.5, 2.4]))
        psv = build_psv(views.image_r, views.image_s, scene.rig, planes)
        cost, ambiguous = matching_cost(psv, 2)
        best = np.argmin(np.where(ambiguous, np.inf, cost), axis=-1)
        assert (best[16:-16, 16:-16] == 2).mean() >= 0.99

    def test_bi_prediction_recovers_plane_depth(self):
        spec = SceneSpec(
            layer_count=1, height=64, width=64, baseline=0.7, profiles=("constant",), patterns=("noise",)
        )
        scene = generate(5, spec)
        depth = scene.surfaces[0]["offset"]
        views = ground_truth_views(scene)
        planes = PlaneStack(depth * np.array([0.45, 0.65, 1.0, 1.5, 2.4]))
        psv = build_psv(views.image_r, views.image_s, scene.rig, planes)
        volume = predict_geometry_photoconsistency(psv, "bi", 1)
        expected = (planes.far - depth) / (planes.far - planes.near)
        hit = np.abs(volume.data[16:-16, 16:-16, 0] - expected) < 1e-9
        assert hit.mean() >= 0.99

    def test_layer_count_must_divide_planes(self):
        rig = identity_rig(16, 12)
        reference = np.zeros((12, 16, 3))
        psv = build_psv(reference, reference, rig, place_planes(1.0, 8.0, 4))
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_photoconsistency(psv, "gc", 3)

    def test_unknown_scheme_rejected(self):
        rig = identity_rig(16, 12)
        reference = np.zeros((12, 16, 3))
        psv = build_psv(reference, reference, rig, place_planes(1.0, 8.0, 4))
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_photoconsistency(psv, "nearest", 2)


class TestGeometryOracle:
    def test_bi_inversion_is_exact(self):
        planes = place_planes(1.0, 8.0, 4)
        rng = np.random.default_rng(31)
        targets = rng.uniform(1.0, 8.0, (2, 5, 6))
        volume = predict_geometry_oracle(targets, "bi", planes)
        recovered = aggregate_bi(volume, planes).depths
        np.testing.assert_allclose(recovered, targets, atol=1e-9)

    def test_gc_one_hot_at_group_plane_depth(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        targets = np.empty((2, 4, 5))
        targets[0] = 2.0
        targets[1] = 4.0
        volume = predict_geometry_oracle(targets, "gc", planes)
        grouped = volume.data.reshape(4, 5, 2, 2)
        assert np.array_equal(grouped[:, :, 0], np.broadcast_to([0.0, 1.0], (4, 5, 2)))
        recovered = aggregate_gc(volume, planes, 2).depths
        assert np.array_equal(recovered, targets)

    def test_gc_interpolates_inside_group_bands(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        rng = np.random.default_rng(32)
        targets = np.stack([rng.uniform(1.0, 2.0, (4, 6)), rng.uniform(4.0, 8.0, (4, 6))])
        volume = predict_geometry_oracle(targets, "gc", planes)
        recovered = aggregate_gc(volume, planes, 2).depths
        np.testing.assert_allclose(recovered, targets, atol=1e-9)

    def test_gc_clamps_target_to_group_band(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        targets = np.full((2, 3, 3), 3.0)
        volume = predict_geometry_oracle(targets, "gc", planes)
        recovered = aggregate_gc(volume, planes, 2).depths
        np.testing.assert_allclose(recovered[0], 2.0, atol=1e-12)
        np.testing.assert_allclose(recovered[1], 4.0, atol=1e-12)

    def test_sa_log_weights_recover_targets(self):
        planes = place_planes(1.0, 8.0, 5)
        rng = np.random.default_rng(33)
        targets = rng.uniform(1.0, 8.0, (3, 4, 5))
        volume = predict_geometry_oracle(targets, "sa", planes)
        recovered = aggregate_sa(volume, planes).depths
        np.testing.assert_allclose(recovered, targets, atol=1e-9)

    def test_sa_handles_range_endpoints(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        targets = np.stack([np.full((3, 3), 1.0), np.full((3, 3), 8.0)])
        volume = predict_geometry_oracle(targets, "sa", planes)
        recovered = aggregate_sa(volume, planes).depths
        np.testing.assert_allclose(recovered, targets, atol=1e-9)

    @pytest.mark.parametrize("bad", [0.5, 9.0])
    def test_target_outside_plane_range_rejected(self, bad):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        with pytest.raises(DepthOutOfRange):
            predict_geometry_oracle(np.full((1, 3, 3), bad), "bi", planes)

    def test_bad_target_rank_rejected(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_oracle(np.full((3, 3), 2.0), "bi", planes)

    def test_gc_layer_count_must_divide_planes(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_oracle(np.full((3, 3, 3), 2.0), "gc", planes)

    def test_unknown_scheme_rejected(self):
        planes = PlaneStack([1.0, 2.0, 4.0, 8.0])
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_oracle(np.full((2, 3, 3), 2.0), "mean", planes)


class TestConstantPredictor:
    def test_gc_is_uniform(self):
        planes = place_planes(1.0, 8.0, 6)
        volume = predict_geometry_constant("gc", 5, 7, planes, 3)
        assert np.array_equal(volume.data, np.full((5, 7, 6), 0.5))

    def test_bi_is_mid_blend(self):
        planes = place_planes(1.0, 8.0, 4)
        volume = predict_geometry_constant("bi", 5, 7, planes, 2)
        assert np.array_equal(volume.data, np.full((5, 7, 2), 0.5))

    def test_sa_masks_other_groups(self):
        planes = place_planes(1.0, 8.0, 4)
        volume = predict_geometry_constant("sa", 5, 7, planes, 2)
        assert volume.data.shape == (5, 7, 2, 4)
        assert np.array_equal(volume.data[..., 0, :2], np.zeros((5, 7, 2)))
        assert np.array_equal(volume.data[..., 0, 2:], np.full((5, 7, 2), -1.0e9))
        assert np.array_equal(volume.data[..., 1, :2], np.full((5, 7, 2), -1.0e9))

    def test_aggregated_layers_stay_ordered(self):
        planes = place_planes(1.0, 8.0, 6)
        volume = predict_geometry_constant("gc", 4, 4, planes, 3)
        layers = aggregate_gc(volume, planes, 3).depths
        assert (np.diff(layers, axis=0) > 0).all()

    def test_layer_count_must_divide_planes(self):
        planes = place_planes(1.0, 8.0, 4)
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_constant("gc", 5, 7, planes, 3)

    def test_unknown_scheme_rejected(self):
        planes = place_planes(1.0, 8.0, 4)
        with pytest.raises(SchemeShapeMismatch):
            predict_geometry_constant("nearest", 5, 7, planes, 2)


class TestColoringOracle:
    def test_colors_and_alphas_pass_through(self):
        rng = np.random.default_rng(34)
        colors = rng.random((2, 4, 6, 3))
        alphas = rng.random((2, 4, 6))
        out = predict_coloring_oracle(colors, alphas)
        assert out.scheme == "raw"
        assert np.array_equal(out.alphas, np.moveaxis(alphas, 0, 2))
        assert np.array_equal(out.colors, np.moveaxis(colors, 0, 2))

    def test_opaque_single_layer(self):
        out = predict_coloring_oracle(np.zeros((1, 4, 6, 3)), np.ones((1, 4, 6)))
        assert np.array_equal(out.alphas, np.ones((4, 6, 1)))

    def test_transparent_layer_preserved(self):
        alphas = np.ones((2, 4, 6))
        alphas[1] = 0.0
        out = predict_coloring_oracle(np.zeros((2, 4, 6, 3)), alphas)
        assert np.array_equal(out.alphas[..., 1], np.zeros((4, 6)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(SchemeShapeMismatch):
            predict_coloring_oracle(np.zeros((2, 4, 6)), np.ones((2, 4, 6)))
        with pytest.raises(SchemeShapeMismatch):
            predict_coloring_oracle(np.zeros((2, 4, 6, 3)), np.ones((2, 4, 5)))

    def test_closed_loop_reproduces_reference_render(self, small_scene, small_views):
        coloring = predict_coloring_oracle(small_scene.textures[..., :3], small_scene.textures[..., 3])
        meshes = to_textured_scene(small_scene).meshes
        textured = blend_textures(coloring, small_views.image_r, meshes)
        assert np.array_equal(textured.textures, small_scene.textures)
        camera = PosedCamera(small_scene.rig.reference, RigidPose.identity())
        out = render(textured, camera)
        assert np.array_equal(out.color, small_views.image_r)


class TestColoringPassthrough:
    def test_every_layer_shows_reference(self):
        rng = np.random.default_rng(35)
        reference = rng.random((5, 7, 3))
        out = predict_coloring_passthrough(reference, 3, alpha=0.8)
        assert out.scheme == "raw"
        assert np.array_equal(out.alphas, np.full((5, 7, 3), 0.8))
        for layer in range(3):
            assert np.array_equal(out.colors[:, :, layer], reference)

    def test_default_alpha_is_opaque(self):
        out = predict_coloring_passthrough(np.zeros((4, 4, 3)), 2)
        assert np.array_equal(out.alphas, np.ones((4, 4, 2)))

    def test_bad_reference_shape_rejected(self):
        with pytest.raises(SchemeShapeMismatch):
            predict_coloring_passthrough(np.zeros((4, 4)), 2)


class TestPredictorDescriptors:
    @pytest.mark.parametrize("behavior", ["oracle", "photo", "constant"])
    @pytest.mark.parametrize("scheme", ["gc", "sa", "bi"])
    def test_valid_geometry_descriptors(self, behavior, scheme):
        predictor = GeometryPredictor(behavior, scheme)
        assert predictor.behavior == behavior
        assert predictor.scheme == scheme

    def test_unknown_geometry_behavior_rejected(self):
        with pytest.raises(InvalidRange):
            GeometryPredictor("train", "gc")

    def test_unknown_geometry_scheme_rejected(self):
        with pytest.raises(SchemeShapeMismatch):
            GeometryPredictor("oracle", "onehot")

    @pytest.mark.parametrize("behavior", ["oracle", "passthrough"])
    def test_valid_coloring_descriptors(self, behavior):
        assert ColoringPredictor(behavior).behavior == behavior

    def test_unknown_coloring_behavior_rejected(self):
        with pytest.raises(InvalidRange):
            ColoringPredictor("train")
