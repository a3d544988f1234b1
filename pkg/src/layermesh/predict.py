"""Stand-in geometry and coloring predictors.

Two families honor the predictor tensor contracts without any learning: an
oracle that inverts the aggregation schemes to hit given target depths, and
a photoconsistency heuristic that scores each plane of a sweep volume by how
well the warped side view matches the reference.  They exist so the full
pipeline runs end to end; neither claims trained-model quality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .aggregate import SCHEMES, BetaVolume, group_bounds
from .errors import DepthOutOfRange, InvalidRange, SchemeShapeMismatch
from .psv import PlaneStack, PlaneSweepVolume
from .texture import ColoringOutput

GEOMETRY_BEHAVIORS = ("oracle", "photo", "constant")
COLORING_BEHAVIORS = ("oracle", "passthrough")

DEFAULT_TAU = 0.05
DEFAULT_COST_RADIUS = 2

_MASK_LOGIT = -1.0e9
# far above any real color distance, far below the group mask once divided
# by tau: ambiguous planes lose to every measured one but a fully
# ambiguous group still ties with itself and degrades to uniform
_AMBIGUOUS_COST = 1.0e6


@dataclass(frozen=True)
class GeometryPredictor:
    """Which geometry stand-in to run and which scheme it emits."""

    behavior: str
    scheme: str

    def __post_init__(self):
        if self.behavior not in GEOMETRY_BEHAVIORS:
            raise InvalidRange(f"unknown geometry behavior {self.behavior!r}")
        if self.scheme not in SCHEMES:
            raise SchemeShapeMismatch(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class ColoringPredictor:
    """Which coloring stand-in to run."""

    behavior: str

    def __post_init__(self):
        if self.behavior not in COLORING_BEHAVIORS:
            raise InvalidRange(f"unknown coloring behavior {self.behavior!r}")


def matching_cost(psv: PlaneSweepVolume, radius: int):
    """Box-filtered per-plane color distance to the reference view.

    Filtering counts only valid warped samples; pixels with no valid sample
    in any window fall back to a constant (fully ambiguous) cost.
    """
    diff = np.abs(psv.slabs - psv.reference[None]).mean(axis=-1)
    valid = psv.valid.astype(np.float64)
    size = (1, 2 * radius + 1, 2 * radius + 1)
    num = uniform_filter(diff * valid, size=size, mode="constant")
    den = uniform_filter(valid, size=size, mode="constant")
    # the moving average leaves ~1e-16 residue where the true count is
    # zero; any real sample weighs at least 1/window, so half of that
    # cleanly separates "no valid sample" from "one valid sample"
    ambiguous = den <= 0.5 / ((2 * radius + 1) ** 2)
    cost = np.divide(num, den, out=np.zeros_like(num), where=~ambiguous)
    return np.moveaxis(cost, 0, 2), np.moveaxis(ambiguous, 0, 2)


def predict_geometry_photoconsistency(
    psv: PlaneSweepVolume,
    scheme: str,
    layer_count: int,
    tau: float = DEFAULT_TAU,
    radius: int = DEFAULT_COST_RADIUS,
) -> BetaVolume:
    """Turn plane matching costs into a volume for the requested scheme.

    gc: softmax over -cost/tau inside each plane group.
    sa: -cost/tau tiled per layer, planes outside the group masked off.
    bi: each group's argmin-cost depth mapped to a blend value; pixels with
    no signal (all costs equal or no valid samples) use the group's mean
    plane depth instead.

    Planes with no valid sample in the window carry an undefined cost and
    are excluded from the competition; a group whose planes are all
    undefined falls back to uniform weights (gc, sa) or its mean depth (bi).
    """
    cost, ambiguous = matching_cost(psv, radius)
    cost = np.where(ambiguous, _AMBIGUOUS_COST, cost)
    p = psv.planes.count
    if p % layer_count != 0:
        raise SchemeShapeMismatch(f"{layer_count} layers do not divide {p} planes")
    per = p // layer_count
    h, w = cost.shape[:2]
    if scheme == "sa":
        logits = np.broadcast_to(-cost[:, :, None, :] / tau, (h, w, layer_count, p)).copy()
        mask = np.full((layer_count, p), _MASK_LOGIT)
        for j in range(layer_count):
            first, last = group_bounds(p, layer_count, j + 1)
            mask[j, first - 1 : last] = 0.0
        return BetaVolume("sa", logits + mask)
    if scheme == "gc":
        # shift within the group so a fully ambiguous group keeps a finite
        # (uniform) softmax instead of underflowing to 0/0
        grouped = (-cost / tau).reshape(h, w, layer_count, per)
        grouped = grouped - grouped.max(axis=-1, keepdims=True)
        weights = np.exp(grouped)
        weights = weights / weights.sum(axis=-1, keepdims=True)
        return BetaVolume("gc", weights.reshape(h, w, p))
    if scheme != "bi":
        raise SchemeShapeMismatch(f"unknown scheme {scheme!r}")
    depths = psv.planes.depths
    grouped_cost = cost.reshape(h, w, layer_count, per)
    best = np.argmin(grouped_cost, axis=-1)
    group_depths = depths.reshape(layer_count, per)
    d_star = np.take_along_axis(
        np.broadcast_to(group_depths, (h, w, layer_count, per)), best[..., None], axis=-1
    )[..., 0]
    flat = grouped_cost.max(axis=-1) - grouped_cost.min(axis=-1) < 1e-12
    d_star = np.where(flat, group_depths.mean(axis=-1), d_star)
    beta = (psv.planes.far - d_star) / (psv.planes.far - psv.planes.near)
    return BetaVolume("bi", np.clip(beta, 0.0, 1.0))


def predict_geometry_constant(
    scheme: str, height: int, width: int, planes: PlaneStack, layer_count: int
) -> BetaVolume:
    """A fully ambiguous prediction: uniform weights, mid blends, flat logits."""
    p = planes.count
    if p % layer_count != 0:
        raise SchemeShapeMismatch(f"{layer_count} layers do not divide {p} planes")
    if scheme == "gc":
        return BetaVolume("gc", np.full((height, width, p), layer_count / p))
    if scheme == "sa":
        mask = np.full((layer_count, p), _MASK_LOGIT)
        for j in range(layer_count):
            first, last = group_bounds(p, layer_count, j + 1)
            mask[j, first - 1 : last] = 0.0
        return BetaVolume("sa", np.broadcast_to(mask, (height, width, layer_count, p)).copy())
    if scheme == "bi":
        return BetaVolume("bi", np.full((height, width, layer_count), 0.5))
    raise SchemeShapeMismatch(f"unknown scheme {scheme!r}")


def predict_geometry_oracle(target_depths: np.ndarray, scheme: str, planes: PlaneStack) -> BetaVolume:
    """Invert an aggregation scheme so it reproduces the given layer depths.

    target_depths is (L, h, w).  bi inverts the blend exactly; gc places
    mass on the two planes bracketing each target inside its group (targets
    outside the group's band clamp to it); sa encodes the two bracketing
    planes as log-weights.  Targets outside [d_1, d_P] raise DepthOutOfRange.
    """
    target = np.asarray(target_depths, dtype=np.float64)
    if target.ndim != 3:
        raise SchemeShapeMismatch(f"expected (L, h, w) targets, got {target.shape}")
    d_near, d_far = planes.near, planes.far
    if np.any(target < d_near) or np.any(target > d_far):
        raise DepthOutOfRange(f"targets must lie in [{d_near}, {d_far}]")
    count, h, w = target.shape
    p = planes.count
    depths = planes.depths
    if scheme == "bi":
        beta = (d_far - np.moveaxis(target, 0, 2)) / (d_far - d_near)
        return BetaVolume("bi", beta)
    if scheme == "gc":
        if p % count != 0:
            raise SchemeShapeMismatch(f"{count} layers do not divide {p} planes")
        beta = np.zeros((h, w, count, p // count))
        group_depths = depths.reshape(count, p // count)
        for j in range(count):
            gd = group_depths[j]
            g = np.clip(target[j], gd[0], gd[-1])
            hi = np.clip(np.searchsorted(gd, g), 1, gd.size - 1)
            lo = hi - 1
            d_a, d_b = gd[lo], gd[hi]
            frac = np.where(d_b > d_a, (d_b - g) / (d_b - d_a), 0.0)
            layer_beta = np.zeros((h, w, gd.size))
            np.put_along_axis(layer_beta, lo[..., None], frac[..., None], axis=-1)
            np.put_along_axis(layer_beta, hi[..., None], 1.0, axis=-1)
            beta[:, :, j, :] = layer_beta
        return BetaVolume("gc", beta.reshape(h, w, p))
    if scheme == "sa":
        g = np.moveaxis(target, 0, 2)
        hi = np.clip(np.searchsorted(depths, g), 1, p - 1)
        lo = hi - 1
        d_a, d_b = depths[lo], depths[hi]
        w_a = np.where(d_b > d_a, (d_b - g) / (d_b - d_a), 1.0)
        logits = np.full((h, w, count, p), _MASK_LOGIT)
        np.put_along_axis(logits, lo[..., None], np.log(np.maximum(w_a, 1e-300))[..., None], axis=-1)
        np.put_along_axis(logits, hi[..., None], np.log(np.maximum(1.0 - w_a, 1e-300))[..., None], axis=-1)
        return BetaVolume("sa", logits)
    raise SchemeShapeMismatch(f"unknown scheme {scheme!r}")


def predict_coloring_oracle(colors: np.ndarray, alphas: np.ndarray) -> ColoringOutput:
    """Pass ground-truth layer colors and opacities through unchanged.

    colors is (L, H, W, 3) and alphas (L, H, W); emitted as a raw coloring.
    """
    colors = np.asarray(colors, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if colors.ndim != 4 or colors.shape[:3] != alphas.shape:
        raise SchemeShapeMismatch(f"colors {colors.shape} do not match alphas {alphas.shape}")
    return ColoringOutput("raw", np.moveaxis(alphas, 0, 2), colors=np.moveaxis(colors, 0, 2))


def predict_coloring_passthrough(reference: np.ndarray, layer_count: int, alpha: float = 1.0) -> ColoringOutput:
    """Every layer shows the reference image at a constant opacity."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim != 3 or reference.shape[2] != 3:
        raise SchemeShapeMismatch(f"expected (H, W, 3) reference, got {reference.shape}")
    h, w = reference.shape[:2]
    colors = np.broadcast_to(reference[:, :, None, :], (h, w, layer_count, 3)).copy()
    alphas = np.full((h, w, layer_count), float(alpha))
    return ColoringOutput("raw", alphas, colors=colors)
