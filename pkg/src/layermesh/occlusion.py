"""Backward optical-flow machinery and cycle-consistency occlusion masks.

A flow field stores, for every pixel q of its own image, the absolute (x, y)
coordinate of the matching point in the other image, so warping is a plain
gather: out[q] = src[flow[q]].  Composing the two opposite flows of an image
pair sends every co-visible pixel back to itself; pixels that fail to come
home within a threshold are marked occluded.

Fractions are measured on a central crop, and pixels whose warp leaves the
frame are excluded from both the numerator and the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import bilinear_sample, pixel_grid
from .errors import ConventionMismatch, ShapeMismatch
from .imgio import read_flow_pfm, write_flow_pfm

BACKWARD = "backward"
FORWARD = "forward"


@dataclass(frozen=True)
class FlowField:
    """Absolute-coordinate flow (H, W, 2) with a direction tag and validity."""

    coords: np.ndarray
    direction: str = BACKWARD
    valid: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise ShapeMismatch(f"expected (H, W, 2) coordinates, got {coords.shape}")
        if self.direction not in (BACKWARD, FORWARD):
            raise ConventionMismatch(f"unknown flow direction {self.direction!r}")
        if self.valid is None:
            object.__setattr__(self, "valid", np.ones(coords.shape[:2], dtype=bool))
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != coords.shape[:2]:
                raise ShapeMismatch("validity mask does not match flow shape")
            object.__setattr__(self, "valid", valid)
        if not np.all(np.isfinite(coords[self.valid])):
            raise ShapeMismatch("flow coordinates must be finite where valid")

    @property
    def shape(self):
        return self.coords.shape[:2]

    def offsets(self) -> np.ndarray:
        """Relative displacements: stored coordinates minus the pixel grid."""
        h, w = self.shape
        return self.coords - pixel_grid(h, w)


@dataclass(frozen=True)
class OcclusionMask:
    """Occlusion decision on the central crop, with the measured fraction."""

    mask: np.ndarray
    valid: np.ndarray
    threshold: float
    margin: int
    fraction: float


def coordinate_grid(height: int, width: int) -> FlowField:
    """The identity flow G with G[q] = q, valid everywhere."""
    return FlowField(pixel_grid(height, width), BACKWARD)


def from_offsets(offsets: np.ndarray, direction: str = BACKWARD, valid=None) -> FlowField:
    """Build an absolute-coordinate flow from relative displacements."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 3 or offsets.shape[2] != 2:
        raise ShapeMismatch(f"expected (H, W, 2) offsets, got {offsets.shape}")
    h, w = offsets.shape[:2]
    return FlowField(pixel_grid(h, w) + offsets, direction, valid)


def backward_warp(src, flow: FlowField):
    """Gather src through a backward flow: out[q] = src[flow[q]].

    src may be an image array (H, W[, C]) or another FlowField; the result
    is (warped, valid) for arrays and a composed FlowField for flows.  A
    pixel stays valid only if its flow is valid, the target lands in frame,
    and (for flow sources) every texel it reads from is itself valid.
    """
    if flow.direction != BACKWARD:
        raise ConventionMismatch("warping needs a backward flow")
    if isinstance(src, FlowField):
        warped, ok = bilinear_sample(src.coords, flow.coords)
        src_ok, _ = bilinear_sample(src.valid.astype(np.float64), flow.coords)
        valid = flow.valid & ok & (src_ok >= 1.0 - 1e-12)
        coords = np.where(valid[..., None], warped, 0.0)
        return FlowField(coords, BACKWARD, valid)
    warped, ok = bilinear_sample(np.asarray(src, dtype=np.float64), flow.coords)
    return warped, flow.valid & ok


def cycle_residual(flow_rn: FlowField, flow_nr: FlowField):
    """Distance each pixel misses itself by after the round trip.

    Returns (residual, valid): per-pixel Euclidean error of composing the
    two backward flows against the identity grid.  Consistent flow pairs
    have zero residual on co-visible pixels; invalid pixels hold +inf.
    """
    if flow_rn.direction != BACKWARD or flow_nr.direction != BACKWARD:
        raise ConventionMismatch("cycle residual needs two backward flows")
    if flow_rn.shape != flow_nr.shape:
        raise ShapeMismatch(f"flow shapes {flow_rn.shape} and {flow_nr.shape} differ")
    h, w = flow_nr.shape
    round_trip = backward_warp(flow_rn, flow_nr)
    err = np.linalg.norm(round_trip.coords - pixel_grid(h, w), axis=-1)
    return np.where(round_trip.valid, err, np.inf), round_trip.valid


def occlusion_mask(
    flow_rn: FlowField,
    flow_nr: FlowField,
    threshold: float = 1.0,
    margin: int = 16,
) -> OcclusionMask:
    """Mark pixels whose cycle residual reaches the threshold, on a crop.

    A pixel is occluded when its round trip misses by at least `threshold`
    pixels.  The mask and the area fraction cover only the central crop,
    and out-of-frame warps count toward neither side of the fraction.
    """
    residual, valid = cycle_residual(flow_rn, flow_nr)
    h, w = valid.shape
    if margin < 0 or 2 * margin >= min(h, w):
        raise ShapeMismatch(f"margin {margin} leaves no {h}x{w} interior")
    sl = (slice(margin, h - margin), slice(margin, w - margin))
    res_c = residual[sl]
    valid_c = valid[sl]
    mask = valid_c & (res_c >= threshold)
    denom = int(valid_c.sum())
    fraction = float(mask.sum() / denom) if denom else 0.0
    return OcclusionMask(mask, valid_c, float(threshold), int(margin), fraction)


def write_flow(path, flow: FlowField) -> None:
    """Store a flow as a 3-channel PFM: x, y, validity."""
    write_flow_pfm(path, flow.coords, flow.valid)


def read_flow(path, direction: str = BACKWARD) -> FlowField:
    """Load a flow written by write_flow; direction is not stored on disk."""
    coords, valid = read_flow_pfm(path)
    return FlowField(coords, direction, valid)
