"""Depth aggregation: turn per-plane predictions into L layer depth maps.

Three schemes are supported, named by tags:

* ``gc`` (group compositing): the P planes are split into L contiguous
  groups and each group's depths are over-composited front to back using
  per-plane opacities, with the last opacity of every group forced to 1.
  Output layers are convex combinations of their group's plane depths, so
  they are bounded per group and globally ordered.
* ``sa`` (soft aggregation): per layer, a softmax over P logits weights the
  plane depths.  Bounded by [d_1, d_P] but not ordered.
* ``bi`` (bounds interpolation): per layer, a single value in [0, 1] blends
  the nearest and farthest plane depths linearly.

Each scheme has an analytic Jacobian used by gradient-based callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BetaOutOfRange, IndivisibleGroups, InvalidRange, SchemeShapeMismatch
from .psv import PlaneStack

SCHEMES = ("gc", "sa", "bi")


@dataclass(frozen=True)
class BetaVolume:
    """Predictor output with a scheme tag.

    Shapes: gc -> (h, w, P) in [0, 1]; sa -> (h, w, L, P) unconstrained
    logits; bi -> (h, w, L) in [0, 1].
    """

    scheme: str
    data: np.ndarray

    def __post_init__(self):
        scheme = self.scheme.lower()
        object.__setattr__(self, "scheme", scheme)
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if scheme not in SCHEMES:
            raise SchemeShapeMismatch(f"unknown scheme {self.scheme!r}")
        want = 4 if scheme == "sa" else 3
        if data.ndim != want:
            raise SchemeShapeMismatch(f"scheme {scheme!r} needs {want}-d data, got shape {data.shape}")
        if scheme in ("gc", "bi") and (np.any(data < 0.0) or np.any(data > 1.0)):
            raise BetaOutOfRange(f"{scheme} values must lie in [0, 1]")


@dataclass(frozen=True)
class DepthLayerSet:
    """L per-pixel depth grids, stored (L, h, w), front layer first."""

    depths: np.ndarray
    scheme: str

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        object.__setattr__(self, "depths", d)
        if d.ndim != 3:
            raise SchemeShapeMismatch(f"expected (L, h, w) depths, got shape {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise InvalidRange("layer depths must be finite and positive")

    @property
    def layer_count(self) -> int:
        return int(self.depths.shape[0])

    @property
    def grid_size(self):
        return self.depths.shape[1:]


def _coerce(beta, scheme: str) -> np.ndarray:
    if isinstance(beta, BetaVolume):
        if beta.scheme != scheme:
            raise SchemeShapeMismatch(f"expected scheme {scheme!r}, got {beta.scheme!r}")
        return beta.data
    return BetaVolume(scheme, np.asarray(beta)).data


def group_bounds(plane_count: int, layer_count: int, layer: int):
    """1-based plane index range (first, last) covered by the given layer."""
    if layer_count < 1 or plane_count % layer_count != 0:
        raise IndivisibleGroups(f"{layer_count} layers do not divide {plane_count} planes")
    if not 1 <= layer <= layer_count:
        raise InvalidRange(f"layer index {layer} outside 1..{layer_count}")
    per = plane_count // layer_count
    return 1 + (layer - 1) * per, layer * per


def _group_weights(beta_groups: np.ndarray) -> np.ndarray:
    """Compositing weights beta_k prod_{i<k}(1 - beta_i), last beta forced to 1.

    beta_groups has shape (..., L, per); the returned weights sum to 1 over
    the last axis exactly.
    """
    b = beta_groups.copy()
    b[..., -1] = 1.0
    keep = np.cumprod(1.0 - b[..., :-1], axis=-1)
    transmit = np.concatenate([np.ones_like(b[..., :1]), keep], axis=-1)
    return b * transmit


def aggregate_gc(beta, planes: PlaneStack, layer_count: int) -> DepthLayerSet:
    """Over-composite each group's plane depths with per-plane opacities."""
    data = _coerce(beta, "gc")
    p = planes.count
    if data.shape[-1] != p:
        raise SchemeShapeMismatch(f"{data.shape[-1]} opacities for {p} planes")
    if layer_count < 1 or p % layer_count != 0:
        raise IndivisibleGroups(f"{layer_count} layers do not divide {p} planes")
    per = p // layer_count
    h, w = data.shape[:2]
    grouped = data.reshape(h, w, layer_count, per)
    weights = _group_weights(grouped)
    depth_groups = planes.depths.reshape(layer_count, per)
    layers = np.einsum("hwlp,lp->lhw", weights, depth_groups)
    return DepthLayerSet(layers, "gc")


def aggregate_sa(logits, planes: PlaneStack, inverse_depth: bool = False) -> DepthLayerSet:
    """Softmax-weighted average of the plane depths, per pixel and layer.

    With inverse_depth the weights average 1/d and the result is inverted,
    which biases the blend toward near planes.
    """
    data = _coerce(logits, "sa")
    if data.shape[-1] != planes.count:
        raise SchemeShapeMismatch(f"{data.shape[-1]} logits for {planes.count} planes")
    weights = _softmax(data)
    if inverse_depth:
        layers = 1.0 / (weights @ (1.0 / planes.depths))
    else:
        layers = weights @ planes.depths
    return DepthLayerSet(np.moveaxis(layers, -1, 0), "sa")


def aggregate_bi(beta, planes: PlaneStack) -> DepthLayerSet:
    """Linear blend of the nearest and farthest plane depths."""
    data = _coerce(beta, "bi")
    layers = data * planes.near + (1.0 - data) * planes.far
    return DepthLayerSet(np.moveaxis(layers, -1, 0), "bi")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def jacobian_gc(beta, planes: PlaneStack, layer_count: int) -> np.ndarray:
    """d(layer depth)/d(opacity), shape (h, w, P).

    Each opacity only influences its own group's layer, so the full Jacobian
    is block diagonal and entry k holds the derivative of layer j(k).  The
    forced last opacity of every group contributes zero.
    """
    data = _coerce(beta, "gc")
    p = planes.count
    if data.shape[-1] != p:
        raise SchemeShapeMismatch(f"{data.shape[-1]} opacities for {p} planes")
    if layer_count < 1 or p % layer_count != 0:
        raise IndivisibleGroups(f"{layer_count} layers do not divide {p} planes")
    per = p // layer_count
    h, w = data.shape[:2]
    b = data.reshape(h, w, layer_count, per).copy()
    b[..., -1] = 1.0
    depths = planes.depths.reshape(layer_count, per)
    keep = np.cumprod(1.0 - b[..., :-1], axis=-1)
    transmit = np.concatenate([np.ones_like(b[..., :1]), keep], axis=-1)
    # rest[..., m] composites depths from planes after m within the group;
    # the reverse recurrence avoids dividing by (1 - beta), which would be
    # singular at beta = 1.
    rest = np.zeros_like(b)
    for m in range(per - 2, -1, -1):
        rest[..., m] = depths[:, m + 1] * b[..., m + 1] + (1.0 - b[..., m + 1]) * rest[..., m + 1]
    jac = transmit * (depths - rest)
    jac[..., -1] = 0.0
    return jac.reshape(h, w, p)


def jacobian_sa(logits, planes: PlaneStack, inverse_depth: bool = False) -> np.ndarray:
    """d(layer depth)/d(logit), shape (h, w, L, P)."""
    data = _coerce(logits, "sa")
    if data.shape[-1] != planes.count:
        raise SchemeShapeMismatch(f"{data.shape[-1]} logits for {planes.count} planes")
    weights = _softmax(data)
    if inverse_depth:
        inv = 1.0 / planes.depths
        mean_inv = weights @ inv
        d_hat = 1.0 / mean_inv
        return -(d_hat**2)[..., None] * weights * (inv - mean_inv[..., None])
    d_hat = weights @ planes.depths
    return weights * (planes.depths - d_hat[..., None])


def jacobian_bi(beta, planes: PlaneStack) -> np.ndarray:
    """d(layer depth)/d(blend), constant d_1 - d_P, shape (h, w, L)."""
    data = _coerce(beta, "bi")
    return np.full_like(data, planes.near - planes.far)


def jacobian(beta: BetaVolume, planes: PlaneStack, layer_count: int | None = None) -> np.ndarray:
    """Dispatch to the scheme-specific Jacobian by the volume's tag."""
    if beta.scheme == "gc":
        if layer_count is None:
            raise InvalidRange("gc jacobian needs the layer count")
        return jacobian_gc(beta, planes, layer_count)
    if beta.scheme == "sa":
        return jacobian_sa(beta, planes)
    return jacobian_bi(beta, planes)


def aggregate(beta: BetaVolume, planes: PlaneStack, layer_count: int | None = None) -> DepthLayerSet:
    """Dispatch to the scheme-specific aggregation by the volume's tag."""
    if beta.scheme == "gc":
        if layer_count is None:
            raise InvalidRange("gc aggregation needs the layer count")
        return aggregate_gc(beta, planes, layer_count)
    if beta.scheme == "sa":
        return aggregate_sa(beta, planes)
    return aggregate_bi(beta, planes)
