"""Layer texturing: unproject the side view onto layers and blend colors.

Colors come from one of three schemes, named by tags:

* ``rsbg``: per texel and layer, a convex blend of the reference view, the
  side view unprojected onto that layer, and a background image.
* ``rbg``: the same without the side term.
* ``raw``: colors given directly, clamped to [0, 1].

All schemes attach per-layer opacities.  Textures use straight
(non-premultiplied) alpha; premultiplication happens inside compositing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraRig, backproject, bilinear_sample, pixel_grid
from .errors import AlphaOutOfRange, InvalidRange, SchemeShapeMismatch, ShapeMismatch
from .meshing import LayeredMeshSet, LayerMesh

COLOR_SCHEMES = ("rsbg", "rbg", "raw")


@dataclass(frozen=True)
class ColoringOutput:
    """Raw coloring decision per texel and layer.

    alphas: (H, W, L) in [0, 1].  For rsbg/rbg, weights (H, W, L, 3) or
    (H, W, L, 2) order (reference, side, background) / (reference,
    background), nonnegative, plus the background image (H, W, 3).  For raw,
    colors (H, W, L, 3).
    """

    scheme: str
    alphas: np.ndarray
    weights: np.ndarray | None = None
    background: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        scheme = self.scheme.lower()
        object.__setattr__(self, "scheme", scheme)
        if scheme not in COLOR_SCHEMES:
            raise SchemeShapeMismatch(f"unknown coloring scheme {self.scheme!r}")
        alphas = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        if alphas.ndim != 3:
            raise SchemeShapeMismatch(f"expected (H, W, L) alphas, got shape {alphas.shape}")
        if np.any(alphas < 0.0) or np.any(alphas > 1.0):
            raise AlphaOutOfRange("alphas must lie in [0, 1]")
        if scheme == "raw":
            if self.colors is None or np.asarray(self.colors).shape != alphas.shape + (3,):
                raise SchemeShapeMismatch("raw scheme needs (H, W, L, 3) colors")
            object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.float64))
            return
        options = 3 if scheme == "rsbg" else 2
        if self.weights is None or np.asarray(self.weights).shape != alphas.shape + (options,):
            raise SchemeShapeMismatch(f"{scheme} needs (H, W, L, {options}) weights")
        weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(weights < 0.0):
            raise InvalidRange("blend weights must be nonnegative")
        object.__setattr__(self, "weights", weights)
        if self.background is None or np.asarray(self.background).shape != alphas.shape[:2] + (3,):
            raise SchemeShapeMismatch(f"{scheme} needs an (H, W, 3) background image")
        object.__setattr__(self, "background", np.asarray(self.background, dtype=np.float64))

    @property
    def layer_count(self) -> int:
        return int(self.alphas.shape[2])


@dataclass(frozen=True)
class TexturedScene:
    """Layered mesh plus per-layer RGBA textures (L, H, W, 4), straight alpha."""

    meshes: LayeredMeshSet
    textures: np.ndarray

    def __post_init__(self):
        tex = np.asarray(self.textures, dtype=np.float64)
        object.__setattr__(self, "textures", tex)
        if tex.ndim != 4 or tex.shape[3] != 4 or tex.shape[0] != self.meshes.layer_count:
            raise ShapeMismatch(f"expected ({self.meshes.layer_count}, H, W, 4) textures, got {tex.shape}")
        if np.any(tex < 0.0) or np.any(tex > 1.0):
            raise AlphaOutOfRange("texture values must lie in [0, 1]")

    @property
    def layer_count(self) -> int:
        return int(self.textures.shape[0])

    @property
    def texture_size(self):
        return self.textures.shape[1:3]

    def rgb_stack(self) -> np.ndarray:
        return self.textures[..., :3]

    def alpha_stack(self) -> np.ndarray:
        return self.textures[..., 3]


def softmax_weights(logits: np.ndarray) -> np.ndarray:
    """Normalize unconstrained blend logits to positive weights summing to 1."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _texel_depths(mesh: LayerMesh, height: int, width: int) -> np.ndarray:
    """Layer depth at every image texel, bilinearly interpolated from the grid.

    Texels beyond the outer grid centres clamp to the edge value, so a
    coarse depth grid extends constantly to the image border.
    """
    grid_h, grid_w = mesh.grid_size
    gx = (np.arange(width) + 0.5) * (grid_w / width) - 0.5
    gy = (np.arange(height) + 0.5) * (grid_h / height) - 0.5
    gx = np.clip(gx, 0.0, grid_w - 1.0)
    gy = np.clip(gy, 0.0, grid_h - 1.0)
    x0 = np.minimum(gx.astype(np.int64), grid_w - 2)
    y0 = np.minimum(gy.astype(np.int64), grid_h - 2)
    fx = (gx - x0)[None, :]
    fy = (gy - y0)[:, None]
    d = mesh.depths
    top = d[np.ix_(y0, x0)] * (1 - fx) + d[np.ix_(y0, x0 + 1)] * fx
    bot = d[np.ix_(y0 + 1, x0)] * (1 - fx) + d[np.ix_(y0 + 1, x0 + 1)] * fx
    return top * (1 - fy) + bot * fy


def unproject_side_onto_layers(side: np.ndarray, rig: CameraRig, meshes: LayeredMeshSet):
    """Sample the side view through each layer's surface, at texture resolution.

    Every reference texel is backprojected at its interpolated layer depth,
    moved into the side camera, and bilinearly sampled from the side image.
    Returns (layers, valid): (L, H, W, 3) colors and (L, H, W) masks; texels
    whose reprojection lands behind the side camera or outside its frame are
    zero and invalid.
    """
    height, width = rig.reference.height, rig.reference.width
    grid = pixel_grid(height, width)
    count = meshes.layer_count
    out = np.zeros((count, height, width, 3))
    valid = np.zeros((count, height, width), dtype=bool)
    k_s = rig.side_intrinsics
    pose = rig.side_pose
    for j, mesh in enumerate(meshes.layers):
        depth = _texel_depths(mesh, height, width)
        pts = backproject(grid, depth, rig.reference)
        cam = pose.transform(pts)
        z = cam[..., 2]
        in_front = z > 0.0
        safe_z = np.where(in_front, z, 1.0)
        px = k_s.fx * cam[..., 0] / safe_z + k_s.cx
        py = k_s.fy * cam[..., 1] / safe_z + k_s.cy
        sampled, ok = bilinear_sample(side, np.stack([px, py], axis=-1))
        ok &= in_front
        sampled[~ok] = 0.0
        out[j] = sampled
        valid[j] = ok
    return out, valid


def blend_textures(
    coloring: ColoringOutput,
    reference: np.ndarray,
    meshes: LayeredMeshSet,
    side_layers: np.ndarray | None = None,
    side_valid: np.ndarray | None = None,
) -> TexturedScene:
    """Resolve a coloring decision into per-layer RGBA textures.

    Weights are normalized to sum to 1 per (texel, layer); where the
    unprojected side texel is invalid its weight is forced to zero first.
    Texels whose weights all vanish fall back to the reference color.
    """
    reference = np.asarray(reference, dtype=np.float64)
    count = coloring.layer_count
    height, width = coloring.alphas.shape[:2]
    if reference.shape != (height, width, 3):
        raise SchemeShapeMismatch(f"reference shape {reference.shape} does not match alphas")
    alphas = np.moveaxis(coloring.alphas, 2, 0)
    if coloring.scheme == "raw":
        rgb = np.moveaxis(np.clip(coloring.colors, 0.0, 1.0), 2, 0)
        return TexturedScene(meshes, np.concatenate([rgb, alphas[..., None]], axis=-1))
    weights = coloring.weights.copy()
    if coloring.scheme == "rsbg":
        if side_layers is None:
            raise SchemeShapeMismatch("rsbg blending needs the unprojected side layers")
        side_hwl = np.moveaxis(np.asarray(side_layers, dtype=np.float64), 0, 2)
        if side_hwl.shape != (height, width, count, 3):
            raise SchemeShapeMismatch(f"side layer shape {np.asarray(side_layers).shape} does not match")
        if side_valid is not None:
            ok = np.moveaxis(np.asarray(side_valid, dtype=bool), 0, 2)
            weights[..., 1] = np.where(ok, weights[..., 1], 0.0)
    total = weights.sum(axis=-1, keepdims=True)
    degenerate = total[..., 0] == 0.0
    if np.any(degenerate):
        weights = weights.copy()
        weights[degenerate] = 0.0
        weights[..., 0][degenerate] = 1.0
        total = weights.sum(axis=-1, keepdims=True)
    weights = weights / total
    color = weights[..., 0:1] * reference[:, :, None, :]
    if coloring.scheme == "rsbg":
        color = color + weights[..., 1:2] * side_hwl
        color = color + weights[..., 2:3] * coloring.background[:, :, None, :]
    else:
        color = color + weights[..., 1:2] * coloring.background[:, :, None, :]
    rgb = np.moveaxis(np.clip(color, 0.0, 1.0), 2, 0)
    return TexturedScene(meshes, np.concatenate([rgb, alphas[..., None]], axis=-1))


def zero_out_check(scene: TexturedScene, threshold: float = 0.01):
    """Mean opacity per layer and a flag for layers that are mostly empty.

    Returns (means, flagged): layers whose mean alpha falls below the
    threshold carry no visible content and can be dropped.
    """
    means = scene.alpha_stack().mean(axis=(1, 2))
    return means, means < threshold
