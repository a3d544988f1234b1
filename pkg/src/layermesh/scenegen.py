"""Deterministic synthetic layered scenes with exact ground truth.

A generated scene holds K non-intersecting layers, each confined to its own
depth band: a depth profile over the reference grid (constant, tilted plane,
or low-frequency wavy), a procedural color texture (checkerboard, gradient,
or band-limited noise), and a binary opacity mask.  The rearmost layer is
fully opaque so every pixel has a visible surface.

The same camera geometry that renders the views also yields analytic
correspondences: flows come from reprojecting exact surface points and
occlusion labels from exact ray casts, independent of the rasterizer.  Both
are exact for planar profiles; pixels whose visibility would depend on a
wavy layer are flagged unknown instead of approximated.  Everything is a
pure function of (seed, spec).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .aggregate import DepthLayerSet
from .core import CameraIntrinsics, CameraRig, PosedCamera, RigidPose, backproject, pixel_grid
from .errors import InvalidScene, InvalidSpec
from .imgio import read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from .meshing import mesh_layers
from .occlusion import BACKWARD, FlowField, write_flow
from .render import compose_over, render
from .texture import TexturedScene

PATTERNS = ("checker", "gradient", "noise")
PROFILES = ("constant", "tilted", "wavy")


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for scene generation; the default set keeps all layers planar."""

    layer_count: int = 3
    height: int = 128
    width: int = 128
    d_near: float = 1.0
    d_far: float = 8.0
    baseline: float = 0.12
    novel_factor: float = 0.5
    focal: float | None = None
    patterns: tuple = PATTERNS
    profiles: tuple = ("constant", "tilted")
    cutouts: bool = True

    def __post_init__(self):
        if self.layer_count < 1:
            raise InvalidSpec(f"need at least one layer, got {self.layer_count}")
        if self.height < 16 or self.width < 16:
            raise InvalidSpec(f"resolution {self.height}x{self.width} too small")
        if not 0 < self.d_near < self.d_far:
            raise InvalidSpec(f"need 0 < d_near < d_far, got ({self.d_near}, {self.d_far})")
        if not self.patterns or any(p not in PATTERNS for p in self.patterns):
            raise InvalidSpec(f"patterns must be drawn from {PATTERNS}")
        if not self.profiles or any(p not in PROFILES for p in self.profiles):
            raise InvalidSpec(f"profiles must be drawn from {PROFILES}")

    @property
    def focal_length(self) -> float:
        return float(self.focal) if self.focal is not None else float(self.width)


@dataclass(frozen=True)
class SyntheticScene:
    """Ground-truth layers plus the stereo rig that observes them.

    depths (K, H, W); textures (K, H, W, 4) with binary alpha; surfaces is a
    per-layer profile record: constant and tilted layers carry an exact
    plane (normal, offset), wavy layers carry none.
    """

    spec: SceneSpec
    seed: int
    rig: CameraRig
    depths: np.ndarray
    textures: np.ndarray
    surfaces: tuple

    @property
    def layer_count(self) -> int:
        return int(self.depths.shape[0])

    def is_planar(self) -> bool:
        return all(s["kind"] != "wavy" for s in self.surfaces)


@dataclass(frozen=True)
class GroundTruthViews:
    """Rendered views with exact correspondence and occlusion ground truth.

    flow_nr lives on the reference image and stores novel-view coordinates;
    flow_rn lives on the novel image and stores reference coordinates.
    occluded_r marks reference pixels whose surface point is blocked in the
    novel view; known_r is False where a wavy layer made the cast
    undecidable. occluded_n / known_n are the same for novel pixels w.r.t.
    the reference view.
    """

    image_r: np.ndarray
    image_s: np.ndarray
    image_n: np.ndarray
    composite_r: np.ndarray
    depth_r: np.ndarray
    flow_nr: FlowField
    flow_rn: FlowField
    occluded_r: np.ndarray
    known_r: np.ndarray
    occluded_n: np.ndarray
    known_n: np.ndarray

    def co_visible_r(self) -> np.ndarray:
        """Reference pixels with a decided, unoccluded round trip."""
        return self.known_r & ~self.occluded_r


def _bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Texel-centre bilinear resize with clamped borders."""
    src_h, src_w = img.shape[:2]
    gx = np.clip((np.arange(width) + 0.5) * (src_w / width) - 0.5, 0.0, src_w - 1.0)
    gy = np.clip((np.arange(height) + 0.5) * (src_h / height) - 0.5, 0.0, src_h - 1.0)
    x0 = np.minimum(gx.astype(np.int64), src_w - 2) if src_w > 1 else np.zeros(width, np.int64)
    y0 = np.minimum(gy.astype(np.int64), src_h - 2) if src_h > 1 else np.zeros(height, np.int64)
    fx = (gx - x0)[None, :, None]
    fy = (gy - y0)[:, None, None]
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _make_pattern(kind: str, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    c0 = rng.uniform(0.05, 0.95, 3)
    c1 = rng.uniform(0.05, 0.95, 3)
    while np.abs(c0 - c1).max() < 0.3:
        c1 = rng.uniform(0.05, 0.95, 3)
    yy, xx = np.mgrid[0:height, 0:width]
    if kind == "checker":
        cell = int(rng.integers(6, 17))
        ox, oy = rng.integers(0, cell, 2)
        tile = ((xx + ox) // cell + (yy + oy) // cell) % 2
        return np.where(tile[..., None] == 0, c0, c1)
    if kind == "gradient":
        angle = rng.uniform(0.0, 2.0 * np.pi)
        ramp = (np.cos(angle) * xx / width + np.sin(angle) * yy / height)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
        return c0 + ramp[..., None] * (c1 - c0)
    coarse = rng.uniform(0.0, 1.0, (8, 8, 3))
    smooth = _bilinear_resize(coarse, height, width)
    return c0 + smooth * (c1 - c0)


def _make_cutout(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Binary opacity: a union of random rectangles and disks, never empty."""
    mask = np.zeros((height, width), dtype=bool)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(int(rng.integers(2, 5))):
        if rng.uniform() < 0.5:
            h = int(rng.integers(height // 6, height // 2))
            w = int(rng.integers(width // 6, width // 2))
            y = int(rng.integers(0, height - h))
            x = int(rng.integers(0, width - w))
            mask[y : y + h, x : x + w] = True
        else:
            r = int(rng.integers(min(height, width) // 10, min(height, width) // 4))
            cy = int(rng.integers(r, height - r))
            cx = int(rng.integers(r, width - r))
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if not mask.any():
        mask[height // 3 : 2 * height // 3, width // 3 : 2 * width // 3] = True
    return mask


def _ray_dirs(intr: CameraIntrinsics, grid: np.ndarray) -> np.ndarray:
    d = np.empty(grid.shape[:-1] + (3,))
    d[..., 0] = (grid[..., 0] - intr.cx) / intr.fx
    d[..., 1] = (grid[..., 1] - intr.cy) / intr.fy
    d[..., 2] = 1.0
    return d


def _make_surface(kind, band, intr, rays, rng):
    """One layer's depth grid plus its exact plane record (None for wavy)."""
    lo, hi = band
    mid = 0.5 * (lo + hi)
    half = 0.45 * (hi - lo)
    if kind == "constant":
        d = float(rng.uniform(mid - 0.5 * half, mid + 0.5 * half))
        return np.full(rays.shape[:2], d), {"kind": "constant", "normal": (0.0, 0.0, 1.0), "offset": d}
    if kind == "tilted":
        for attempt in range(12):
            scale = 0.12 / (attempt + 1)
            a, b = rng.uniform(-scale, scale, 2)
            normal = np.array([a, b, 1.0])
            normal /= np.linalg.norm(normal)
            offset = float(normal @ np.array([0.0, 0.0, mid]))
            denom = rays @ normal
            depth = offset / denom
            if depth.min() > lo and depth.max() < hi:
                return depth, {"kind": "tilted", "normal": tuple(normal), "offset": offset}
        return np.full(rays.shape[:2], mid), {"kind": "constant", "normal": (0.0, 0.0, 1.0), "offset": mid}
    amp = 0.6 * half
    fx_cyc = int(rng.integers(1, 4))
    fy_cyc = int(rng.integers(1, 4))
    px, py = rng.uniform(0.0, 2.0 * np.pi, 2)
    h, w = rays.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    depth = mid + amp * np.sin(2 * np.pi * fx_cyc * xx / w + px) * np.cos(2 * np.pi * fy_cyc * yy / h + py)
    return depth, {"kind": "wavy", "normal": None, "offset": None}


def rig_for_spec(spec: SceneSpec) -> CameraRig:
    """Reference at the origin, side and novel displaced along +x."""
    h, w = spec.height, spec.width
    intr = CameraIntrinsics(
        fx=spec.focal_length, fy=spec.focal_length, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h
    )
    side_pose = RigidPose(np.eye(3), np.array([-spec.baseline, 0.0, 0.0]))
    novel_pose = RigidPose(np.eye(3), np.array([-spec.baseline * spec.novel_factor, 0.0, 0.0]))
    return CameraRig(intr, PosedCamera(intr, side_pose), PosedCamera(intr, novel_pose))


def generate(seed: int, spec: SceneSpec | None = None) -> SyntheticScene:
    """Build a reproducible layered scene: same (seed, spec), same bits."""
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    rig = rig_for_spec(spec)
    intr = rig.reference

    k = spec.layer_count
    inv = np.linspace(1.0 / spec.d_near, 1.0 / spec.d_far, k + 1)
    edges = 1.0 / inv
    grid = pixel_grid(h, w)
    rays = _ray_dirs(intr, grid)
    depths = np.empty((k, h, w))
    textures = np.empty((k, h, w, 4))
    surfaces = []
    for j in range(k):
        lo, hi = edges[j], edges[j + 1]
        pad = 0.08 * (hi - lo)
        profile = spec.profiles[int(rng.integers(len(spec.profiles)))]
        pattern = spec.patterns[int(rng.integers(len(spec.patterns)))]
        depths[j], surface = _make_surface(profile, (lo + pad, hi - pad), intr, rays, rng)
        surfaces.append(surface)
        textures[j, ..., :3] = np.clip(_make_pattern(pattern, h, w, rng), 0.0, 1.0)
        if spec.cutouts and j < k - 1:
            textures[j, ..., 3] = _make_cutout(h, w, rng)
        else:
            textures[j, ..., 3] = 1.0
    return SyntheticScene(spec, seed, rig, depths, textures, tuple(surfaces))


def to_textured_scene(scene: SyntheticScene) -> TexturedScene:
    """The ground-truth layers as a renderable layered mesh scene."""
    layer_set = DepthLayerSet(scene.depths, "gt")
    meshes = mesh_layers(layer_set, scene.rig.reference)
    return TexturedScene(meshes, scene.textures)


def _visible_layer(scene: SyntheticScene) -> np.ndarray:
    """Front-most opaque layer index per reference pixel."""
    alpha = scene.textures[..., 3] >= 0.5
    first = np.argmax(alpha, axis=0)
    return first


def _cast(scene: SyntheticScene, origin: np.ndarray, dirs: np.ndarray):
    """Exact first-hit ray cast against the layered scene.

    Returns (layer, t, ref_xy, known): hit layer index (-1 for none), ray
    parameter of the hit, the reference-image coordinate of the hit point,
    and whether the answer is decidable (False once a wavy layer would have
    to be intersected).
    """
    shape = dirs.shape[:-1]
    layer = np.full(shape, -1, dtype=np.int64)
    t_hit = np.full(shape, np.inf)
    ref_xy = np.zeros(shape + (2,))
    known = np.ones(shape, dtype=bool)
    remaining = np.ones(shape, dtype=bool)
    intr = scene.rig.reference
    h, w = scene.spec.height, scene.spec.width
    for j, surface in enumerate(scene.surfaces):
        if not remaining.any():
            break
        if surface["kind"] == "wavy":
            known &= ~remaining
            remaining[:] = False
            break
        normal = np.asarray(surface["normal"])
        offset = surface["offset"]
        denom = dirs @ normal
        ok = np.abs(denom) > 1e-12
        t = (offset - origin @ normal) / np.where(ok, denom, 1.0)
        ok &= t > 1e-9
        t = np.where(ok, t, 0.0)
        pt = origin + t[..., None] * dirs
        z = pt[..., 2]
        ok &= z > 1e-9
        px = np.where(ok, intr.fx * pt[..., 0] / np.where(ok, z, 1.0) + intr.cx, -1.0)
        py = np.where(ok, intr.fy * pt[..., 1] / np.where(ok, z, 1.0) + intr.cy, -1.0)
        ix = np.rint(px).astype(np.int64)
        iy = np.rint(py).astype(np.int64)
        inside = ok & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        opaque = np.zeros(shape, dtype=bool)
        alpha = scene.textures[j, ..., 3] >= 0.5
        opaque[inside] = alpha[iy[inside], ix[inside]]
        newly = remaining & inside & opaque
        layer[newly] = j
        t_hit[newly] = t[newly]
        ref_xy[newly, 0] = px[newly]
        ref_xy[newly, 1] = py[newly]
        remaining &= ~newly
    return layer, t_hit, ref_xy, known


def _camera_center(pose: RigidPose) -> np.ndarray:
    return -(pose.rotation.T @ pose.translation)


def _flow_from_reference(scene: SyntheticScene, target: PosedCamera):
    """Reference-pixel flow into a target view, via exact surface points."""
    h, w = scene.spec.height, scene.spec.width
    grid = pixel_grid(h, w)
    vis = _visible_layer(scene)
    depth = np.take_along_axis(scene.depths, vis[None], axis=0)[0]
    points = backproject(grid, depth, scene.rig.reference)
    cam = target.pose.transform(points)
    z = cam[..., 2]
    ok = z > 1e-9
    coords = np.zeros((h, w, 2))
    coords[..., 0] = target.intrinsics.fx * cam[..., 0] / np.where(ok, z, 1.0) + target.intrinsics.cx
    coords[..., 1] = target.intrinsics.fy * cam[..., 1] / np.where(ok, z, 1.0) + target.intrinsics.cy
    coords[~ok] = 0.0
    return FlowField(coords, BACKWARD, ok), points, vis, depth


def _occlusion_labels(scene: SyntheticScene, viewer: PosedCamera, points: np.ndarray, expect_layer: np.ndarray):
    """Whether each surface point is blocked from the viewer's centre."""
    origin = _camera_center(viewer.pose)
    dirs = points - origin
    layer, t_hit, _, known = _cast(scene, origin, dirs)
    same = (layer == expect_layer) & (np.abs(t_hit - 1.0) <= 1e-6)
    occluded = known & ~same
    return occluded, known


def ground_truth_views(scene: SyntheticScene) -> GroundTruthViews:
    """Render the three views and derive exact flows and occlusion labels."""
    textured = to_textured_scene(scene)
    rig = scene.rig
    reference_cam = PosedCamera(rig.reference, RigidPose.identity())
    out_r = render(textured, reference_cam)
    out_s = render(textured, rig.side)
    out_n = render(textured, rig.novel)
    composite, _ = compose_over(scene.textures[..., :3], scene.textures[..., 3])

    flow_nr, points_r, vis_r, depth_r = _flow_from_reference(scene, rig.novel)
    occluded_r, known_r = _occlusion_labels(scene, rig.novel, points_r, vis_r)

    h, w = scene.spec.height, scene.spec.width
    origin_n = _camera_center(rig.novel.pose)
    dirs_n = _ray_dirs(rig.novel.intrinsics, pixel_grid(h, w)) @ rig.novel.pose.rotation
    layer_n, _, ref_xy, known_n_cast = _cast(scene, origin_n, dirs_n)
    hit_n = layer_n >= 0
    flow_rn = FlowField(np.where(hit_n[..., None], ref_xy, 0.0), BACKWARD, hit_n & known_n_cast)

    # novel-pixel labels: is the point the novel camera sees blocked in the
    # reference view?  Reference rays leave the origin, so the cast expects
    # the same layer at t=1 for points re-derived from the reference side.
    origin_r = np.zeros(3)
    occluded_n = np.zeros((h, w), dtype=bool)
    known_n = known_n_cast & hit_n
    if hit_n.any():
        # reconstruct the 3D hit points from the cast's reference pixels and
        # the layer planes, then cast from the reference centre
        pts = np.zeros((h, w, 3))
        for j, surface in enumerate(scene.surfaces):
            sel = layer_n == j
            if not sel.any() or surface["kind"] == "wavy":
                continue
            normal = np.asarray(surface["normal"])
            offset = surface["offset"]
            t_all = (offset - origin_n @ normal) / (dirs_n[sel] @ normal)
            pts[sel] = origin_n + t_all[..., None] * dirs_n[sel]
        dirs_back = pts - origin_r
        layer_b, t_b, _, known_b = _cast(scene, origin_r, dirs_back)
        same = (layer_b == layer_n) & (np.abs(t_b - 1.0) <= 1e-6)
        occluded_n = known_n & known_b & ~same
        known_n &= known_b

    return GroundTruthViews(
        image_r=out_r.color,
        image_s=out_s.color,
        image_n=out_n.color,
        composite_r=composite,
        depth_r=depth_r,
        flow_nr=flow_nr,
        flow_rn=flow_rn,
        occluded_r=occluded_r,
        known_r=known_r,
        occluded_n=occluded_n,
        known_n=known_n,
    )


def write_scene_bundle(path, scene: SyntheticScene, views: GroundTruthViews | None = None) -> None:
    """Write a scene directory: images, depths, flows, cameras, manifest."""
    os.makedirs(path, exist_ok=True)
    views = views or ground_truth_views(scene)
    write_ppm(os.path.join(path, "image_r.ppm"), views.image_r)
    write_ppm(os.path.join(path, "image_s.ppm"), views.image_s)
    write_ppm(os.path.join(path, "image_n.ppm"), views.image_n)
    write_ppm(os.path.join(path, "composite_r.ppm"), views.composite_r)
    write_pfm(os.path.join(path, "depth_r.pfm"), views.depth_r)
    for j in range(scene.layer_count):
        write_pfm(os.path.join(path, f"layer_{j}_depth.pfm"), scene.depths[j])
        write_ppm(os.path.join(path, f"layer_{j}_color.ppm"), scene.textures[j, ..., :3])
        write_pgm(os.path.join(path, f"layer_{j}_alpha.pgm"), scene.textures[j, ..., 3] >= 0.5)
    write_flow(os.path.join(path, "flow_nr.pfm"), views.flow_nr)
    write_flow(os.path.join(path, "flow_rn.pfm"), views.flow_rn)
    write_pgm(os.path.join(path, "occluded_r.pgm"), views.occluded_r)
    write_pgm(os.path.join(path, "known_r.pgm"), views.known_r)
    write_pgm(os.path.join(path, "occluded_n.pgm"), views.occluded_n)
    write_pgm(os.path.join(path, "known_n.pgm"), views.known_n)

    intr = scene.rig.reference
    with open(os.path.join(path, "cameras.txt"), "w") as fh:
        fh.write(f"intrinsics {intr.fx} {intr.fy} {intr.cx} {intr.cy} {intr.width} {intr.height}\n")
        for name, pose in (
            ("reference", RigidPose.identity()),
            ("side", scene.rig.side.pose),
            ("novel", scene.rig.novel.pose),
        ):
            row = " ".join(f"{v:.17g}" for v in pose.matrix34().ravel())
            fh.write(f"{name} {row}\n")

    manifest = {
        "kind": "scene",
        "seed": scene.seed,
        "spec": asdict(scene.spec),
        "surfaces": [
            {
                "kind": s["kind"],
                "normal": list(s["normal"]) if s["normal"] is not None else None,
                "offset": s["offset"],
            }
            for s in scene.surfaces
        ],
        "layer_count": scene.layer_count,
    }
    with open(os.path.join(path, "scene.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_scene_bundle(path) -> SyntheticScene:
    """Rebuild a scene from a bundle directory written by write_scene_bundle."""
    manifest_path = os.path.join(path, "scene.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScene(f"{manifest_path}: {exc}") from exc
    if manifest.get("kind") != "scene":
        raise InvalidScene(f"{manifest_path}: not a scene manifest")
    raw_spec = dict(manifest["spec"])
    raw_spec["patterns"] = tuple(raw_spec["patterns"])
    raw_spec["profiles"] = tuple(raw_spec["profiles"])
    spec = SceneSpec(**raw_spec)
    count = int(manifest["layer_count"])
    depths = np.stack([read_pfm(os.path.join(path, f"layer_{j}_depth.pfm")) for j in range(count)])
    textures = np.zeros(depths.shape + (4,))
    for j in range(count):
        textures[j, ..., :3] = read_ppm(os.path.join(path, f"layer_{j}_color.ppm"))
        textures[j, ..., 3] = read_pgm(os.path.join(path, f"layer_{j}_alpha.pgm")) >= 128
    surfaces = tuple(
        {
            "kind": s["kind"],
            "normal": tuple(s["normal"]) if s["normal"] is not None else None,
            "offset": s["offset"],
        }
        for s in manifest["surfaces"]
    )
    return SyntheticScene(spec, int(manifest["seed"]), rig_for_spec(spec), depths.astype(np.float64), textures, surfaces)
