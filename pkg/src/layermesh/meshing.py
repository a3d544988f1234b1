"""Triangle mesh layers built from per-layer depth grids.

Every layer shares one connectivity: the h x w vertex grid is tessellated
quad by quad, each quad split along its top-left to bottom-right diagonal.
That gives every interior vertex six neighbours and both triangles of a quad
a positive signed area in image coordinates (x right, y down).

Vertices are parameterized by a fixed ray through the reference camera and a
scalar depth, so a mesh deforms only along rays when depths change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregate import DepthLayerSet
from .core import CameraIntrinsics, backproject, bilinear_sample
from .errors import DegenerateGrid, RowOutOfRange, ShapeMismatch


@dataclass(frozen=True)
class LayerMesh:
    """One layer: ray pixels (h, w, 2), depths (h, w), shared triangles.

    Triangle entries index the row-major flattened vertex grid.
    """

    pixels: np.ndarray
    depths: np.ndarray
    triangles: np.ndarray
    layer: int

    def __post_init__(self):
        if self.pixels.shape[:2] != self.depths.shape or self.pixels.shape[2:] != (2,):
            raise ShapeMismatch("pixel grid and depth grid disagree")
        h, w = self.depths.shape
        if self.triangles.shape != (2 * (h - 1) * (w - 1), 3):
            raise ShapeMismatch(f"expected {2 * (h - 1) * (w - 1)} triangles, got {self.triangles.shape}")

    @property
    def grid_size(self):
        return self.depths.shape

    def positions(self, intrinsics: CameraIntrinsics) -> np.ndarray:
        """3D vertex positions (h*w, 3): each ray pixel backprojected at its depth."""
        pts = backproject(self.pixels, self.depths, intrinsics)
        return pts.reshape(-1, 3)


@dataclass(frozen=True)
class LayeredMeshSet:
    """All L layer meshes, front first, sharing grid dims and connectivity.

    Carries the camera intrinsics that define the vertex rays, so consumers
    can recover 3D geometry from the (pixel, depth) parameterization alone.
    """

    layers: tuple
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ShapeMismatch("need at least one layer mesh")
        first = self.layers[0]
        for m in self.layers[1:]:
            if m.grid_size != first.grid_size or not np.array_equal(m.triangles, first.triangles):
                raise ShapeMismatch("layers must share grid dims and connectivity")

    def positions(self, layer: int) -> np.ndarray:
        return self.layers[layer].positions(self.intrinsics)

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def grid_size(self):
        return self.layers[0].grid_size

    @property
    def triangles(self) -> np.ndarray:
        return self.layers[0].triangles

    def depth_stack(self) -> np.ndarray:
        return np.stack([m.depths for m in self.layers])


def grid_pixels(grid_h: int, grid_w: int, image_h: int, image_w: int) -> np.ndarray:
    """Ray pixels (grid_h, grid_w, 2) at texel centres of the coarse grid.

    Identity when the grid matches the image size: vertex (r, c) sits at
    pixel (c, r).
    """
    if grid_h < 2 or grid_w < 2 or image_h < 1 or image_w < 1:
        raise DegenerateGrid(f"grid {grid_h}x{grid_w} in image {image_h}x{image_w}")
    xs = (np.arange(grid_w) + 0.5) * (image_w / grid_w) - 0.5
    ys = (np.arange(grid_h) + 0.5) * (image_h / grid_h) - 0.5
    return np.stack(np.meshgrid(xs, ys), axis=-1)


def grid_triangles(grid_h: int, grid_w: int, diagonal: str = "tl-br") -> np.ndarray:
    """Index triples for the fixed quad split, 2(h-1)(w-1) triangles.

    diagonal selects which corner pair each quad connects; both options keep
    positive winding.
    """
    if grid_h < 2 or grid_w < 2:
        raise DegenerateGrid(f"grid {grid_h}x{grid_w} has no quads")
    r, c = np.meshgrid(np.arange(grid_h - 1), np.arange(grid_w - 1), indexing="ij")
    v00 = (r * grid_w + c).ravel()
    v01 = v00 + 1
    v10 = v00 + grid_w
    v11 = v10 + 1
    if diagonal == "tl-br":
        tris = np.stack([np.stack([v00, v01, v11], axis=-1), np.stack([v00, v11, v10], axis=-1)], axis=1)
    elif diagonal == "tr-bl":
        tris = np.stack([np.stack([v00, v01, v10], axis=-1), np.stack([v01, v11, v10], axis=-1)], axis=1)
    else:
        raise DegenerateGrid(f"unknown diagonal {diagonal!r}")
    return tris.reshape(-1, 3).astype(np.int64)


def mesh_layers(depths: DepthLayerSet, intrinsics: CameraIntrinsics, diagonal: str = "tl-br") -> LayeredMeshSet:
    """Build the layered mesh from per-layer depth grids.

    The depth grid may be coarser than the image; vertex rays then sit at
    the coarse texel centres mapped into image coordinates.
    """
    grid_h, grid_w = depths.grid_size
    pixels = grid_pixels(grid_h, grid_w, intrinsics.height, intrinsics.width)
    triangles = grid_triangles(grid_h, grid_w, diagonal)
    layers = [LayerMesh(pixels, depths.depths[j], triangles, j) for j in range(depths.layer_count)]
    return LayeredMeshSet(tuple(layers), intrinsics)


def slice_table(meshes: LayeredMeshSet, alphas: np.ndarray, row: int) -> np.ndarray:
    """Per-layer scanline profile: columns (layer, pixel x, depth, opacity).

    alphas holds the L opacity textures (L, H, W); the opacity for a vertex
    is sampled at its ray pixel.  Rows are ordered layer-major.
    """
    grid_h, grid_w = meshes.grid_size
    if not 0 <= row < grid_h:
        raise RowOutOfRange(f"row {row} outside 0..{grid_h - 1}")
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 3 or alphas.shape[0] != meshes.layer_count:
        raise ShapeMismatch(f"expected ({meshes.layer_count}, H, W) alphas, got {alphas.shape}")
    out = np.empty((meshes.layer_count * grid_w, 4))
    for j, mesh in enumerate(meshes.layers):
        at = mesh.pixels[row]
        a, _ = bilinear_sample(alphas[j], at)
        block = out[j * grid_w : (j + 1) * grid_w]
        block[:, 0] = j
        block[:, 1] = at[:, 0]
        block[:, 2] = mesh.depths[row]
        block[:, 3] = a
    return out


def write_slice_csv(path, table: np.ndarray) -> None:
    """Write a slice table as `layer,x,depth,alpha` rows with a header."""
    header = "layer,x,depth,alpha"
    np.savetxt(path, table, fmt=["%d", "%.6f", "%.9f", "%.6f"], delimiter=",", header=header, comments="")


def write_slice_svg(path, table: np.ndarray, width: int = 640, height: int = 360) -> None:
    """Scatter plot of a slice table: x vs depth, dot opacity from alpha."""
    palette = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")
    x, d = table[:, 1], table[:, 2]
    pad = 30
    x_lo, x_hi = float(x.min()), float(x.max())
    d_lo, d_hi = float(d.min()), float(d.max())
    x_span = (x_hi - x_lo) or 1.0
    d_span = (d_hi - d_lo) or 1.0
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for layer, px, depth, alpha in table:
        cx = pad + (px - x_lo) / x_span * (width - 2 * pad)
        cy = pad + (depth - d_lo) / d_span * (height - 2 * pad)
        color = palette[int(layer) % len(palette)]
        lines.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2.5" fill="{color}" fill-opacity="{max(alpha, 0.05):.3f}"/>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
