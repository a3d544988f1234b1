"""Shared geometric and image primitives.

Conventions used throughout the package:

* The reference camera frame is the world frame; every pose maps
  reference-camera coordinates to the target camera's coordinates
  (``x_target = R @ x_ref + t``).  The reference camera's own pose is the
  identity.
* The camera looks along +z; x points right, y points down.
* Pixel coordinates are ``(x, y)`` 2-vectors.  Pixel ``(i, j)`` of an image
  array ``img[j, i]`` samples the continuous coordinate ``(i, j)`` exactly
  (no half-pixel offset).
* Images are numpy arrays of shape ``(H, W, C)`` (or ``(H, W)`` for masks),
  color channels in ``[0, 1]``, float64 for all in-memory math.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCamera, NonPositiveDepth


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, sensor size (px)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateCamera(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DegenerateCamera(
                f"principal point ({self.cx}, {self.cy}) outside sensor {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        """Closed-form K^-1 (exact, no linear solve)."""
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics for the same field of view at another resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


_ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class RigidPose:
    """Rigid transform mapping reference-camera coords to target-camera coords."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > _ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {err:.3e})")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation has negative determinant (reflection)")

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        """Rodrigues rotation about `axis` by `angle` radians, plus translation."""
        a = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n == 0:
            rot = np.eye(3)
        else:
            a = a / n
            kx = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
            rot = np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)
        return RigidPose(rot, np.asarray(translation, dtype=np.float64))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, inner: "RigidPose") -> "RigidPose":
        """Pose equivalent to applying `inner` first, then this pose."""
        return RigidPose(self.rotation @ inner.rotation,
                         self.rotation @ inner.translation + self.translation)

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix34(self) -> np.ndarray:
        """Row-major 3x4 [R | t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    @staticmethod
    def from_matrix34(m: np.ndarray) -> "RigidPose":
        m = np.asarray(m, dtype=np.float64).reshape(3, 4)
        return RigidPose(m[:, :3], m[:, 3])


@dataclass(frozen=True)
class PosedCamera:
    """Intrinsics plus the pose of the camera relative to the reference view."""

    intrinsics: CameraIntrinsics
    pose: RigidPose


@dataclass(frozen=True)
class CameraRig:
    """Calibrated reference/side/novel camera triple (reference pose = identity)."""

    reference: CameraIntrinsics
    side: PosedCamera
    novel: PosedCamera

    @property
    def side_intrinsics(self) -> CameraIntrinsics:
        return self.side.intrinsics

    @property
    def side_pose(self) -> RigidPose:
        return self.side.pose

    @property
    def novel_intrinsics(self) -> CameraIntrinsics:
        return self.novel.intrinsics

    @property
    def novel_pose(self) -> RigidPose:
        return self.novel.pose


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixel coordinates (..., 2).

    Raises NonPositiveDepth if any point has z <= 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("cannot project points with z <= 0")
    x = intr.fx * pts[..., 0] / z + intr.cx
    y = intr.fy * pts[..., 1] / z + intr.cy
    return np.stack([x, y], axis=-1)


def backproject(pixels: np.ndarray, depth, intr: CameraIntrinsics) -> np.ndarray:
    """Lift pixels (..., 2) at `depth` (scalar or (...)) to camera-frame points.

    The returned z component equals `depth` exactly.
    """
    px = np.asarray(pixels, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepth("cannot backproject at depth <= 0")
    x = (px[..., 0] - intr.cx) / intr.fx * d
    y = (px[..., 1] - intr.cy) / intr.fy * d
    z = np.broadcast_to(d, x.shape).astype(np.float64, copy=True)
    return np.stack([x, y, z], axis=-1)


def ray_directions(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Unit-depth ray directions K^-1 [px, py, 1] for pixels (..., 2)."""
    px = np.asarray(pixels, dtype=np.float64)
    x = (px[..., 0] - intr.cx) / intr.fx
    y = (px[..., 1] - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array with entry [j, i] = (i, j)."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def bilinear_sample(img: np.ndarray, at: np.ndarray):
    """Bilinearly sample `img` (H, W[, C]) at coordinates `at` (..., 2).

    Samples outside [0, W-1] x [0, H-1] return zeros with the validity flag
    set False; out-of-bounds is a flagged value, never an error.

    Returns (values, valid) where values has shape (..., C) (or (...) for a
    2-D image) and valid has shape (...).
    """
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    h, w, _ = arr.shape
    pts = np.asarray(at, dtype=np.float64)
    x = pts[..., 0]
    y = pts[..., 1]

    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1) & np.isfinite(x) & np.isfinite(y)
    # non-finite coordinates must not reach the integer cast below
    xc = np.clip(np.where(valid, x, 0.0), 0, w - 1)
    yc = np.clip(np.where(valid, y, 0.0), 0, h - 1)

    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0

    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    out = (
        arr[y0, x0] * w00[..., None]
        + arr[y0, x1] * w01[..., None]
        + arr[y1, x0] * w10[..., None]
        + arr[y1, x1] * w11[..., None]
    )
    out = np.where(valid[..., None], out, 0.0)
    if squeeze:
        out = out[..., 0]
    return out, valid
