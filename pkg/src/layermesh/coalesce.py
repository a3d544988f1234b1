"""Merge a plane sweep of RGBA images into a few deformable textured layers.

Depth merging reuses the group-compositing aggregation with the plane alphas
as opacities, so every merged layer stays inside its plane group's depth
band.  Texture merging runs a small Monte-Carlo integration per texel: rays
jittered around the texel's projection are traced through the group's
planes, and the per-ray composited colors and transmittances are combined in
log space, weighted by the Gaussian density of the jitter.

Texels whose rays are all fully transparent have nothing to merge; they are
flagged and written as clear black rather than raising.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .aggregate import DepthLayerSet, aggregate_gc, group_bounds
from .core import CameraIntrinsics, backproject, bilinear_sample, pixel_grid
from .errors import AlphaOutOfRange, InvalidRange, IoError, ShapeMismatch
from .imgio import read_pgm, read_ppm, write_pgm, write_ppm
from .meshing import mesh_layers
from .psv import PlaneStack
from .texture import TexturedScene


@dataclass(frozen=True)
class MultiPlaneImage:
    """Fronto-parallel RGBA planes: a PlaneStack plus (P, H, W, 4) images."""

    planes: PlaneStack
    images: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        object.__setattr__(self, "images", images)
        if images.ndim != 4 or images.shape[3] != 4:
            raise ShapeMismatch(f"expected (P, H, W, 4) images, got {images.shape}")
        if images.shape[0] != self.planes.count:
            raise ShapeMismatch(f"{images.shape[0]} images for {self.planes.count} planes")
        if np.any(images < 0.0) or np.any(images > 1.0):
            raise AlphaOutOfRange("plane RGBA values must lie in [0, 1]")

    @property
    def image_size(self):
        return self.images.shape[1:3]


@dataclass(frozen=True)
class CoalesceConfig:
    """Monte-Carlo merge settings.

    layer_count groups the planes; sigma is the pixel-space jitter std;
    samples is the ray count per texel; alpha_floor keeps transmittance
    logarithms finite; ray_mode picks the ray construction: "literal" shoots
    from the jittered image-plane point through the 3D texel, "pinhole"
    through the camera centre.
    """

    layer_count: int
    sigma: float = 1.0
    samples: int = 64
    seed: int = 0
    alpha_floor: float = 1e-6
    ray_mode: str = "literal"

    def __post_init__(self):
        if self.layer_count < 1:
            raise InvalidRange(f"need at least one layer, got {self.layer_count}")
        if self.sigma <= 0.0:
            raise InvalidRange(f"sigma must be positive, got {self.sigma}")
        if self.samples < 1:
            raise InvalidRange(f"need at least one sample, got {self.samples}")
        if not 0.0 < self.alpha_floor < 1.0:
            raise InvalidRange(f"alpha floor must lie in (0, 1), got {self.alpha_floor}")
        if self.ray_mode not in ("literal", "pinhole"):
            raise InvalidRange(f"unknown ray mode {self.ray_mode!r}")


def merge_depths(mpi: MultiPlaneImage, layer_count: int) -> DepthLayerSet:
    """Composite each plane group's depths using the plane alphas.

    Exactly the group-compositing aggregation with beta = alpha, so single-
    plane groups return the plane depths unchanged and empty groups fall to
    the group's far plane.
    """
    alphas = np.moveaxis(mpi.images[..., 3], 0, 2)
    return aggregate_gc(alphas, mpi.planes, layer_count)


def _snap_into_frame(coords, limit, eps=1e-9):
    """Pull coordinates within eps outside the frame back onto its edge.

    Rounding in the ray-plane algebra can land a boundary texel a few ulp
    outside the image; without the snap such texels would sample as invalid
    and lose their alpha entirely.
    """
    coords = np.where((coords > -eps) & (coords < 0.0), 0.0, coords)
    return np.where((coords > limit) & (coords < limit + eps), float(limit), coords)


def _ray_plane_pixels(intr, grid, jitter, texels, plane_depth, mode):
    """Pixel coordinates where each jittered ray crosses the given plane."""
    if mode == "pinhole":
        return grid + jitter
    q = np.empty(texels.shape)
    q[..., 0] = (grid[..., 0] + jitter[..., 0] - intr.cx) / intr.fx
    q[..., 1] = (grid[..., 1] + jitter[..., 1] - intr.cy) / intr.fy
    q[..., 2] = 1.0
    direction = texels - q
    denom = direction[..., 2]
    # a texel exactly on the z=1 image plane would make the ray parallel
    safe = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    s = (plane_depth - 1.0) / safe
    hit = q + s[..., None] * direction
    px = _snap_into_frame(intr.fx * hit[..., 0] / plane_depth + intr.cx, intr.width - 1)
    py = _snap_into_frame(intr.fy * hit[..., 1] / plane_depth + intr.cy, intr.height - 1)
    return np.stack([px, py], axis=-1)


def merge_textures(
    mpi: MultiPlaneImage,
    layers: DepthLayerSet,
    config: CoalesceConfig,
    reference: CameraIntrinsics,
):
    """Monte-Carlo transmittance-weighted texture for each merged layer.

    Returns (scene, degenerate): the textured layered mesh and a (L, H, W)
    flag of texels whose rays were all fully transparent (forced to clear
    black).  Results are bit-reproducible for a fixed config seed.
    """
    p = mpi.planes.count
    count = config.layer_count
    if p % count != 0:
        raise ShapeMismatch(f"{count} layers do not divide {p} planes")
    if layers.layer_count != count:
        raise ShapeMismatch(f"depth set has {layers.layer_count} layers, config wants {count}")
    height, width = mpi.image_size
    if layers.grid_size != (height, width):
        raise ShapeMismatch(f"layer grid {layers.grid_size} does not match images {mpi.image_size}")
    if (reference.height, reference.width) != (height, width):
        raise ShapeMismatch("reference camera size does not match the plane images")

    rng = np.random.default_rng(config.seed)
    grid = pixel_grid(height, width)
    textures = np.zeros((count, height, width, 4))
    degenerate = np.zeros((count, height, width), dtype=bool)
    per = p // count
    for j in range(count):
        first, last = group_bounds(p, count, j + 1)
        texels = backproject(grid, layers.depths[j], reference)
        lam = np.zeros((height, width))
        num_logsq = np.zeros((height, width))
        num_color = np.zeros((height, width, 3))
        for _ in range(config.samples):
            jitter = rng.standard_normal((height, width, 2)) * config.sigma
            weight = np.exp(-(jitter**2).sum(axis=-1) / (2.0 * config.sigma**2))
            transmit = np.ones((height, width))
            color = np.zeros((height, width, 3))
            for k in range(first - 1, last):
                d_k = float(mpi.planes.depths[k])
                pix = _ray_plane_pixels(reference, grid, jitter, texels, d_k, config.ray_mode)
                rgba, ok = bilinear_sample(mpi.images[k], pix)
                a = np.where(ok, rgba[..., 3], 0.0)
                color += (transmit * a)[..., None] * rgba[..., :3]
                transmit *= 1.0 - a
            log_abar = np.log(np.clip(transmit, config.alpha_floor, 1.0))
            lam += weight * log_abar
            num_logsq += weight * log_abar**2
            num_color += (weight * log_abar)[..., None] * color
        empty = lam > -1e-12
        safe_lam = np.where(empty, -1.0, lam)
        abar = np.clip(np.exp(num_logsq / safe_lam), config.alpha_floor, 1.0)
        alpha = np.where(empty, 0.0, 1.0 - abar)
        premult = num_color / safe_lam[..., None]
        straight = premult / np.maximum(alpha, 1e-12)[..., None]
        straight = np.where(empty[..., None], 0.0, np.clip(straight, 0.0, 1.0))
        textures[j, ..., :3] = straight
        textures[j, ..., 3] = alpha
        degenerate[j] = empty
    meshes = mesh_layers(layers, reference)
    return TexturedScene(meshes, textures), degenerate


def write_mpi_bundle(path, mpi: MultiPlaneImage, intrinsics: CameraIntrinsics | None = None) -> None:
    """Store an MPI as a directory: manifest.json + per-plane PPM/PGM pairs.

    When the camera that observes the planes is known it is recorded in the
    manifest so later merges do not have to guess one.
    """
    os.makedirs(path, exist_ok=True)
    entries = []
    for k in range(mpi.planes.count):
        color_name = f"plane_{k:04d}.ppm"
        alpha_name = f"plane_{k:04d}_alpha.pgm"
        write_ppm(os.path.join(path, color_name), mpi.images[k, ..., :3])
        write_pgm(os.path.join(path, alpha_name), mpi.images[k, ..., 3])
        entries.append({"depth": float(mpi.planes.depths[k]), "color": color_name, "alpha": alpha_name})
    manifest = {"kind": "mpi", "planes": entries}
    if intrinsics is not None:
        manifest["intrinsics"] = {
            "fx": intrinsics.fx,
            "fy": intrinsics.fy,
            "cx": intrinsics.cx,
            "cy": intrinsics.cy,
            "width": intrinsics.width,
            "height": intrinsics.height,
        }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_mpi_intrinsics(path) -> CameraIntrinsics | None:
    """The camera recorded in an MPI bundle manifest, if any."""
    manifest_path = os.path.join(path, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"{manifest_path}: {exc}") from exc
    entry = manifest.get("intrinsics")
    if entry is None:
        return None
    return CameraIntrinsics(
        fx=float(entry["fx"]),
        fy=float(entry["fy"]),
        cx=float(entry["cx"]),
        cy=float(entry["cy"]),
        width=int(entry["width"]),
        height=int(entry["height"]),
    )


def read_mpi_bundle(path) -> MultiPlaneImage:
    """Load an MPI directory written by write_mpi_bundle."""
    manifest_path = os.path.join(path, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"{manifest_path}: {exc}") from exc
    if manifest.get("kind") != "mpi" or "planes" not in manifest:
        raise IoError(f"{manifest_path}: not an MPI bundle manifest")
    depths = []
    images = []
    for entry in manifest["planes"]:
        depths.append(entry["depth"])
        rgb = read_ppm(os.path.join(path, entry["color"]))
        alpha = read_pgm(os.path.join(path, entry["alpha"])).astype(np.float64) / 255.0
        images.append(np.concatenate([rgb, alpha[..., None]], axis=-1))
    return MultiPlaneImage(PlaneStack(np.asarray(depths)), np.stack(images))
