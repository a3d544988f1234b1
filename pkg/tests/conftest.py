"""Shared fixtures and rig builders for the test suite.

The session-scoped scene is small (two planar layers at 48x64) so the
rasterizer JIT compiles once and every dependent test stays fast.  Tests
that need different scene shapes build their own via layermesh.scenegen.
"""

from __future__ import annotations

import numpy as np
import pytest

from layermesh.core import CameraIntrinsics, CameraRig, PosedCamera, RigidPose
from layermesh.scenegen import SceneSpec, generate, ground_truth_views


def make_rig(
    width: int = 64,
    height: int = 48,
    focal: float | None = None,
    baseline: float = 0.1,
    novel_factor: float = 0.5,
) -> CameraRig:
    """Stereo rig with identity rotations and x-axis translations.

    The side camera sits at +baseline along x in the reference frame, so
    its pose (reference coords -> side coords) translates by -baseline.
    """
    f = float(focal) if focal is not None else float(width)
    intr = CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    side = PosedCamera(intr, RigidPose(np.eye(3), np.array([-baseline, 0.0, 0.0])))
    novel = PosedCamera(intr, RigidPose(np.eye(3), np.array([-baseline * novel_factor, 0.0, 0.0])))
    return CameraRig(intr, side, novel)


def identity_rig(width: int = 8, height: int = 6, focal: float = 16.0) -> CameraRig:
    """Degenerate rig: side and novel cameras coincide with the reference."""
    return make_rig(width, height, focal, baseline=0.0, novel_factor=0.0)


def ramp_image(height: int, width: int) -> np.ndarray:
    """RGB image whose red channel equals the x coordinate in pixels.

    Linear along x, so bilinear sampling at (x, y) returns exactly x in
    the red channel wherever the sample is in bounds.
    """
    img = np.zeros((height, width, 3))
    img[..., 0] = np.arange(width)[None, :]
    img[..., 1] = 0.25
    img[..., 2] = np.linspace(0.0, 1.0, height)[:, None]
    return img


@pytest.fixture(scope="session")
def small_scene():
    """Deterministic two-layer planar scene, 48x64, seed 0."""
    spec = SceneSpec(layer_count=2, height=48, width=64, profiles=("constant", "tilted"))
    return generate(0, spec)


@pytest.fixture(scope="session")
def small_views(small_scene):
    """Rendered views and analytic flows for the session scene."""
    return ground_truth_views(small_scene)
