"""Plane sweep volume construction.

Fronto-parallel planes are placed in the reference frustum, spaced uniformly
in inverse depth, and the side view is warped onto each plane.  The warp for
the plane z = d is the planar homography

    H(d) = K_s (R + t n^T / d) K_r^-1,   n = (0, 0, 1),

which is algebraically identical to backprojecting each reference pixel at
depth d, applying the side pose, and projecting with K_s.  Both paths are
implemented; the homography is the production path and the per-pixel path
backs the agreement test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, CameraRig, RigidPose, backproject, bilinear_sample, pixel_grid, project
from .errors import InvalidRange, NonPositiveDepth, ShapeMismatch, TooFewPlanes


@dataclass(frozen=True)
class PlaneStack:
    """Strictly increasing positive plane depths, front (nearest) to back."""

    depths: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "depths", d)
        if d.size < 2:
            raise TooFewPlanes(f"need at least 2 planes, got {d.size}")
        if d[0] <= 0 or np.any(np.diff(d) <= 0):
            raise InvalidRange("plane depths must be positive and strictly increasing")

    @property
    def count(self) -> int:
        return int(self.depths.size)

    @property
    def near(self) -> float:
        return float(self.depths[0])

    @property
    def far(self) -> float:
        return float(self.depths[-1])


@dataclass(frozen=True)
class PlaneSweepVolume:
    """P side-view slabs warped to the plane depths, plus the reference view.

    slabs: (P, H, W, 3); valid: (P, H, W) bool; reference: (H, W, 3).
    Logically an H x W x (3P + 3) tensor.
    """

    planes: PlaneStack
    slabs: np.ndarray
    valid: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        if self.slabs.shape[0] != self.planes.count:
            raise ShapeMismatch(f"{self.slabs.shape[0]} slabs for {self.planes.count} planes")
        if self.slabs.shape[:3] != self.valid.shape or self.slabs.shape[1:3] != self.reference.shape[:2]:
            raise ShapeMismatch("slab/validity/reference shapes disagree")


def place_planes(d_near: float, d_far: float, count: int) -> PlaneStack:
    """Plane depths spaced uniformly in inverse depth, endpoints inclusive."""
    if count < 2:
        raise TooFewPlanes(f"need at least 2 planes, got {count}")
    if d_near <= 0 or d_near >= d_far:
        raise InvalidRange(f"need 0 < d_near < d_far, got ({d_near}, {d_far})")
    inv = np.linspace(1.0 / d_near, 1.0 / d_far, count)
    depths = 1.0 / inv
    depths[0] = d_near
    depths[-1] = d_far
    return PlaneStack(depths)


def plane_homography(rig: CameraRig, depth: float) -> np.ndarray:
    """3x3 homography mapping reference pixels to side-view pixels on z = depth."""
    if depth <= 0:
        raise NonPositiveDepth(f"plane depth must be positive, got {depth}")
    k_s = rig.side_intrinsics.matrix()
    k_r_inv = rig.reference.inverse_matrix()
    pose = rig.side_pose
    n = np.array([0.0, 0.0, 1.0])
    mid = pose.rotation + np.outer(pose.translation, n) / depth
    return k_s @ mid @ k_r_inv


def _warp_coords_homography(rig: CameraRig, depth: float, out_size) -> np.ndarray:
    h, w = out_size
    hom = plane_homography(rig, depth)
    grid = pixel_grid(h, w)
    ones = np.ones(grid.shape[:2])
    homog = np.stack([grid[..., 0], grid[..., 1], ones], axis=-1)
    mapped = homog @ hom.T
    return mapped[..., :2] / mapped[..., 2:3]


def _warp_coords_reproject(rig: CameraRig, depth: float, out_size) -> np.ndarray:
    h, w = out_size
    grid = pixel_grid(h, w)
    pts = backproject(grid, depth, rig.reference)
    return project(rig.side_pose.transform(pts), rig.side_intrinsics)


def warp_side_to_plane(side: np.ndarray, rig: CameraRig, depth: float, out_size=None):
    """Warp the side view onto the fronto-parallel plane z = depth.

    Returns (image, valid): the warped (H, W, 3) image and the mask of
    reference pixels whose reprojection landed inside the side frame.
    """
    if depth <= 0:
        raise NonPositiveDepth(f"plane depth must be positive, got {depth}")
    if out_size is None:
        out_size = (rig.reference.height, rig.reference.width)
    coords = _warp_coords_homography(rig, depth, out_size)
    return bilinear_sample(side, coords)


def build_psv(reference: np.ndarray, side: np.ndarray, rig: CameraRig, planes: PlaneStack) -> PlaneSweepVolume:
    """Warp the side view onto every plane and attach the reference view."""
    out_size = reference.shape[:2]
    slabs = np.empty((planes.count,) + reference.shape, dtype=np.float64)
    valid = np.empty((planes.count,) + out_size, dtype=bool)
    for k, d in enumerate(planes.depths):
        slabs[k], valid[k] = warp_side_to_plane(side, rig, float(d), out_size)
    return PlaneSweepVolume(planes, slabs, valid, np.asarray(reference, dtype=np.float64))
