"""Software rasterizer and compositor for layered mesh scenes.

Layers are rasterized independently into any pinhole camera, then composited
per pixel in layer-index order with the compose-over operator.  Within one
layer the nearest triangle wins per pixel, with the lowest triangle id
breaking exact depth ties, so the result is a pure function of the scene and
camera: tiling and thread count never change a single bit.

The backward pass treats triangle coverage as frozen: it chains analytic
derivatives through compose-over, perspective-correct barycentric
interpolation, and the pinhole projection, back to vertex depths and texture
RGBA.  Coverage changes (a perturbation flipping which triangle wins) are
non-differentiable by construction and the finite-difference harness flags
and skips probes that would cross them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .aggregate import DepthLayerSet
from .core import PosedCamera, bilinear_sample, ray_directions
from .errors import AlphaOutOfRange, ShapeMismatch
from .meshing import mesh_layers
from .texture import TexturedScene

DEFAULT_TILE = 32
NEAR_CLIP = 1e-9


@dataclass(frozen=True)
class FragmentBuffer:
    """Nearest hit per (layer, pixel): flags, depths, barycentrics, ids, RGBA.

    hit (L, H, W) bool; depth (L, H, W) with +inf at misses; bary (L, H, W, 3)
    perspective-correct; triangle (L, H, W) int, -1 at misses; rgba
    (L, H, W, 4) vertex-interpolated, zero at misses.
    """

    hit: np.ndarray
    depth: np.ndarray
    bary: np.ndarray
    triangle: np.ndarray
    rgba: np.ndarray


@dataclass(frozen=True)
class RenderOutput:
    """Composited color (H, W, 3) and accumulated alpha (H, W)."""

    color: np.ndarray
    alpha: np.ndarray
    fragments: FragmentBuffer | None = None


@dataclass(frozen=True)
class RenderGradients:
    """Loss gradients: vertex depths (L, h, w) and texture RGB/alpha."""

    depths: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray


def compose_over(colors: np.ndarray, alphas: np.ndarray):
    """Front-to-back compose-over along the leading axis.

    colors (K, ..., 3), alphas (K, ...) in [0, 1].  Returns
    (color, alpha): color = sum_k c_k a_k prod_{i<k}(1 - a_i) and
    alpha = 1 - prod_k(1 - a_k).
    """
    colors = np.asarray(colors, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if colors.shape[:-1] != alphas.shape or colors.shape[-1] != 3:
        raise ShapeMismatch(f"colors {colors.shape} do not match alphas {alphas.shape}")
    if np.any(alphas < 0.0) or np.any(alphas > 1.0):
        raise AlphaOutOfRange("alphas must lie in [0, 1]")
    keep = np.cumprod(1.0 - alphas, axis=0)
    transmit = np.concatenate([np.ones_like(alphas[:1]), keep[:-1]], axis=0)
    weight = alphas * transmit
    color = (colors * weight[..., None]).sum(axis=0)
    return color, 1.0 - keep[-1]


@njit(cache=True, parallel=True)
def _raster_kernel(
    verts_xy,
    verts_z,
    tris,
    boxes,
    tile_starts,
    tile_tris,
    tiles_x,
    tile,
    height,
    width,
    depth_out,
    tri_out,
    bary_out,
):
    ntiles = tile_starts.shape[0] - 1
    for t in prange(ntiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        px0 = tx * tile
        py0 = ty * tile
        px1 = min(px0 + tile, width) - 1
        py1 = min(py0 + tile, height) - 1
        # each pixel belongs to exactly one tile, so the buffers can arrive
        # uninitialized and still come out fully defined
        for yy in range(py0, py1 + 1):
            for xx in range(px0, px1 + 1):
                depth_out[yy, xx] = np.inf
                tri_out[yy, xx] = -1
                bary_out[yy, xx, 0] = 0.0
                bary_out[yy, xx, 1] = 0.0
                bary_out[yy, xx, 2] = 0.0
        for idx in range(tile_starts[t], tile_starts[t + 1]):
            k = tile_tris[idx]
            i0 = tris[k, 0]
            i1 = tris[k, 1]
            i2 = tris[k, 2]
            x0 = verts_xy[i0, 0]
            y0 = verts_xy[i0, 1]
            x1 = verts_xy[i1, 0]
            y1 = verts_xy[i1, 1]
            x2 = verts_xy[i2, 0]
            y2 = verts_xy[i2, 1]
            z0 = verts_z[i0]
            z1 = verts_z[i1]
            z2 = verts_z[i2]
            xlo = max(boxes[k, 0], px0)
            xhi = min(boxes[k, 1], px1)
            ylo = max(boxes[k, 2], py0)
            yhi = min(boxes[k, 3], py1)
            for yy in range(ylo, yhi + 1):
                py = float(yy)
                for xx in range(xlo, xhi + 1):
                    px = float(xx)
                    a0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                    a1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                    a2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                    area = a0 + a1 + a2
                    if area == 0.0:
                        continue
                    inside_pos = a0 >= 0.0 and a1 >= 0.0 and a2 >= 0.0
                    inside_neg = a0 <= 0.0 and a1 <= 0.0 and a2 <= 0.0
                    if not (inside_pos or inside_neg):
                        continue
                    l0 = a0 / area
                    l1 = a1 / area
                    l2 = a2 / area
                    wsum = l0 / z0 + l1 / z1 + l2 / z2
                    if wsum <= 0.0:
                        continue
                    d = 1.0 / wsum
                    if d < depth_out[yy, xx]:
                        depth_out[yy, xx] = d
                        tri_out[yy, xx] = k
                        bary_out[yy, xx, 0] = l0 / z0 * d
                        bary_out[yy, xx, 1] = l1 / z1 * d
                        bary_out[yy, xx, 2] = l2 / z2 * d


@njit(cache=True)
def _attr_kernel(tri_out, bary_out, tris, vert_rgba, rgba_out):
    height, width = tri_out.shape
    for yy in range(height):
        for xx in range(width):
            k = tri_out[yy, xx]
            if k < 0:
                for c in range(4):
                    rgba_out[yy, xx, c] = 0.0
                continue
            i0 = tris[k, 0]
            i1 = tris[k, 1]
            i2 = tris[k, 2]
            b0 = bary_out[yy, xx, 0]
            b1 = bary_out[yy, xx, 1]
            b2 = bary_out[yy, xx, 2]
            for c in range(4):
                rgba_out[yy, xx, c] = (
                    vert_rgba[i0, c] * b0 + vert_rgba[i1, c] * b1 + vert_rgba[i2, c] * b2
                )


@njit(cache=True)
def _compose_kernel(rgba, tri, color_out, alpha_out):
    count, height, width = tri.shape
    for yy in range(height):
        for xx in range(width):
            r = 0.0
            g = 0.0
            b = 0.0
            trans = 1.0
            for k in range(count):
                if tri[k, yy, xx] < 0:
                    continue
                a = rgba[k, yy, xx, 3]
                if a < 0.0:
                    a = 0.0
                elif a > 1.0:
                    a = 1.0
                weight = a * trans
                r += rgba[k, yy, xx, 0] * weight
                g += rgba[k, yy, xx, 1] * weight
                b += rgba[k, yy, xx, 2] * weight
                trans *= 1.0 - a
            color_out[yy, xx, 0] = r
            color_out[yy, xx, 1] = g
            color_out[yy, xx, 2] = b
            alpha_out[yy, xx] = 1.0 - trans


@njit(cache=True)
def _backward_kernel(
    tri_out,
    bary_out,
    tris,
    verts_xy,
    verts_cam,
    vert_rgba,
    ray_cam,
    fx,
    fy,
    dfrag,
    d_rgba,
    d_depth,
):
    height, width = tri_out.shape
    for yy in range(height):
        for xx in range(width):
            k = tri_out[yy, xx]
            if k < 0:
                continue
            g0 = dfrag[yy, xx, 0]
            g1 = dfrag[yy, xx, 1]
            g2 = dfrag[yy, xx, 2]
            g3 = dfrag[yy, xx, 3]
            if g0 == 0.0 and g1 == 0.0 and g2 == 0.0 and g3 == 0.0:
                continue
            i0 = tris[k, 0]
            i1 = tris[k, 1]
            i2 = tris[k, 2]
            b0 = bary_out[yy, xx, 0]
            b1 = bary_out[yy, xx, 1]
            b2 = bary_out[yy, xx, 2]
            # attribute path: fragment = sum_i b_i V_i
            db0 = vert_rgba[i0, 0] * g0 + vert_rgba[i0, 1] * g1 + vert_rgba[i0, 2] * g2 + vert_rgba[i0, 3] * g3
            db1 = vert_rgba[i1, 0] * g0 + vert_rgba[i1, 1] * g1 + vert_rgba[i1, 2] * g2 + vert_rgba[i1, 3] * g3
            db2 = vert_rgba[i2, 0] * g0 + vert_rgba[i2, 1] * g1 + vert_rgba[i2, 2] * g2 + vert_rgba[i2, 3] * g3
            d_rgba[i0, 0] += b0 * g0
            d_rgba[i0, 1] += b0 * g1
            d_rgba[i0, 2] += b0 * g2
            d_rgba[i0, 3] += b0 * g3
            d_rgba[i1, 0] += b1 * g0
            d_rgba[i1, 1] += b1 * g1
            d_rgba[i1, 2] += b1 * g2
            d_rgba[i1, 3] += b1 * g3
            d_rgba[i2, 0] += b2 * g0
            d_rgba[i2, 1] += b2 * g1
            d_rgba[i2, 2] += b2 * g2
            d_rgba[i2, 3] += b2 * g3
            z0 = verts_cam[i0, 2]
            z1 = verts_cam[i1, 2]
            z2 = verts_cam[i2, 2]
            # recover screen-space barycentrics from the stored
            # perspective-correct ones
            l0 = b0 * z0
            l1 = b1 * z1
            l2 = b2 * z2
            ls = l0 + l1 + l2
            l0 /= ls
            l1 /= ls
            l2 /= ls
            wsum = l0 / z0 + l1 / z1 + l2 / z2
            s = db0 * b0 + db1 * b1 + db2 * b2
            dl0 = (db0 - s) / (z0 * wsum)
            dl1 = (db1 - s) / (z1 * wsum)
            dl2 = (db2 - s) / (z2 * wsum)
            dz0 = b0 / z0 * (s - db0)
            dz1 = b1 / z1 * (s - db1)
            dz2 = b2 / z2 * (s - db2)
            x0 = verts_xy[i0, 0]
            y0 = verts_xy[i0, 1]
            x1 = verts_xy[i1, 0]
            y1 = verts_xy[i1, 1]
            x2 = verts_xy[i2, 0]
            y2 = verts_xy[i2, 1]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            sl = dl0 * l0 + dl1 * l1 + dl2 * l2
            da0 = (dl0 - sl) / area
            da1 = (dl1 - sl) / area
            da2 = (dl2 - sl) / area
            px = float(xx)
            py = float(yy)
            # signed-area partials: a_i depends on the two vertices opposite i
            dx0 = da1 * (py - y2) + da2 * (y1 - py)
            dy0 = da1 * (x2 - px) + da2 * (px - x1)
            dx1 = da2 * (py - y0) + da0 * (y2 - py)
            dy1 = da2 * (x0 - px) + da0 * (px - x2)
            dx2 = da0 * (py - y1) + da1 * (y0 - py)
            dy2 = da0 * (x1 - px) + da1 * (px - x0)
            cx0 = verts_cam[i0, 0]
            cy0 = verts_cam[i0, 1]
            cx1 = verts_cam[i1, 0]
            cy1 = verts_cam[i1, 1]
            cx2 = verts_cam[i2, 0]
            cy2 = verts_cam[i2, 1]
            dcx0 = dx0 * fx / z0
            dcy0 = dy0 * fy / z0
            dcz0 = dz0 - dx0 * fx * cx0 / (z0 * z0) - dy0 * fy * cy0 / (z0 * z0)
            dcx1 = dx1 * fx / z1
            dcy1 = dy1 * fy / z1
            dcz1 = dz1 - dx1 * fx * cx1 / (z1 * z1) - dy1 * fy * cy1 / (z1 * z1)
            dcx2 = dx2 * fx / z2
            dcy2 = dy2 * fy / z2
            dcz2 = dz2 - dx2 * fx * cx2 / (z2 * z2) - dy2 * fy * cy2 / (z2 * z2)
            d_depth[i0] += dcx0 * ray_cam[i0, 0] + dcy0 * ray_cam[i0, 1] + dcz0 * ray_cam[i0, 2]
            d_depth[i1] += dcx1 * ray_cam[i1, 0] + dcy1 * ray_cam[i1, 1] + dcz1 * ray_cam[i1, 2]
            d_depth[i2] += dcx2 * ray_cam[i2, 0] + dcy2 * ray_cam[i2, 1] + dcz2 * ray_cam[i2, 2]


@njit(cache=True)
def _project_kernel(pix, dep, rot, tra, sfx, sfy, scx, scy, fx, fy, cx, cy, cam, xy, ok):
    for n in range(pix.shape[0]):
        d = dep[n]
        wx = (pix[n, 0] - scx) / sfx * d
        wy = (pix[n, 1] - scy) / sfy * d
        zx = wx * rot[0, 0] + wy * rot[0, 1] + d * rot[0, 2] + tra[0]
        zy = wx * rot[1, 0] + wy * rot[1, 1] + d * rot[1, 2] + tra[1]
        zz = wx * rot[2, 0] + wy * rot[2, 1] + d * rot[2, 2] + tra[2]
        cam[n, 0] = zx
        cam[n, 1] = zy
        cam[n, 2] = zz
        good = zz > NEAR_CLIP
        ok[n] = good
        sz = zz if good else 1.0
        xy[n, 0] = fx * zx / sz + cx
        xy[n, 1] = fy * zy / sz + cy


def _project_vertices(scene: TexturedScene, camera: PosedCamera, layer: int):
    """Camera-space and screen-space vertex data for one layer.

    Vertices are the mesh's ray pixels backprojected at their depths (the
    depth validation happened at mesh construction), moved into the target
    camera frame and projected; vertices at or behind the near clip keep a
    placeholder projection and are flagged not-ok.
    """
    mesh = scene.meshes.layers[layer]
    pix = np.ascontiguousarray(mesh.pixels.reshape(-1, 2))
    dep = np.ascontiguousarray(mesh.depths.reshape(-1))
    count = pix.shape[0]
    cam = np.empty((count, 3))
    xy = np.empty((count, 2))
    ok = np.empty(count, dtype=np.bool_)
    src = scene.meshes.intrinsics
    intr = camera.intrinsics
    _project_kernel(
        pix, dep,
        np.ascontiguousarray(camera.pose.rotation),
        np.ascontiguousarray(camera.pose.translation),
        src.fx, src.fy, src.cx, src.cy,
        intr.fx, intr.fy, intr.cx, intr.cy,
        cam, xy, ok,
    )
    return cam, xy, ok


@njit(cache=True)
def _vertex_gather_kernel(tex, pix, out):
    height, width = tex.shape[:2]
    for n in range(pix.shape[0]):
        x = pix[n, 0]
        y = pix[n, 1]
        xi = np.int64(x)
        yi = np.int64(y)
        if xi != x or yi != y or xi < 0 or xi >= width or yi < 0 or yi >= height:
            return False
        for c in range(4):
            out[n, c] = tex[yi, xi, c]
    return True


def _vertex_rgba(scene: TexturedScene, layer: int) -> np.ndarray:
    mesh = scene.meshes.layers[layer]
    tex = scene.textures[layer]
    pix = np.ascontiguousarray(mesh.pixels.reshape(-1, 2))
    # vertex grids normally sit on integer texel centers, where the bilinear
    # weights collapse to a plain lookup
    out = np.empty((pix.shape[0], 4))
    if _vertex_gather_kernel(np.ascontiguousarray(tex), pix, out):
        return out
    values, _ = bilinear_sample(tex, mesh.pixels)
    return np.ascontiguousarray(values.reshape(-1, 4))


@njit(cache=True)
def _bin_count_kernel(vxlo, vxhi, vylo, vyhi, ok, tris, width, height, tile, tiles_x, boxes, keep, counts):
    for k in range(tris.shape[0]):
        i0 = tris[k, 0]
        i1 = tris[k, 1]
        i2 = tris[k, 2]
        if not (ok[i0] and ok[i1] and ok[i2]):
            continue
        # ceil/floor commute with min/max, so per-vertex integer bounds give
        # the same bbox as rounding the float extremes
        xlo = min(vxlo[i0], min(vxlo[i1], vxlo[i2]))
        xhi = max(vxhi[i0], max(vxhi[i1], vxhi[i2]))
        ylo = min(vylo[i0], min(vylo[i1], vylo[i2]))
        yhi = max(vyhi[i0], max(vyhi[i1], vyhi[i2]))
        if xlo < 0:
            xlo = 0
        if ylo < 0:
            ylo = 0
        if xhi > width - 1:
            xhi = width - 1
        if yhi > height - 1:
            yhi = height - 1
        if xlo > xhi or ylo > yhi:
            continue
        keep[k] = True
        boxes[k, 0] = xlo
        boxes[k, 1] = xhi
        boxes[k, 2] = ylo
        boxes[k, 3] = yhi
        for ty in range(ylo // tile, yhi // tile + 1):
            for tx in range(xlo // tile, xhi // tile + 1):
                counts[ty * tiles_x + tx] += 1


@njit(cache=True)
def _bin_fill_kernel(boxes, keep, tile, tiles_x, tile_starts, cursor, tile_tris):
    for k in range(boxes.shape[0]):
        if not keep[k]:
            continue
        for ty in range(boxes[k, 2] // tile, boxes[k, 3] // tile + 1):
            for tx in range(boxes[k, 0] // tile, boxes[k, 1] // tile + 1):
                t = ty * tiles_x + tx
                tile_tris[tile_starts[t] + cursor[t]] = k
                cursor[t] += 1


def _bin_triangles(xy, ok, tris, width, height, tile):
    """Clip triangle bboxes to the screen and bucket them by pixel tile.

    Returns (boxes, tile_starts, tile_tris, tiles_x): integer pixel bboxes
    per triangle and a CSR list of triangle ids per tile, ascending within
    each tile so per-pixel scans see ids in order.
    """
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    ntiles = tiles_x * tiles_y
    # clip in float first so extreme projections never overflow the cast
    xs = np.clip(xy[:, 0], -1e9, 1e9)
    ys = np.clip(xy[:, 1], -1e9, 1e9)
    vxlo = np.ceil(xs).astype(np.int64)
    vxhi = np.floor(xs).astype(np.int64)
    vylo = np.ceil(ys).astype(np.int64)
    vyhi = np.floor(ys).astype(np.int64)
    boxes = np.zeros((tris.shape[0], 4), dtype=np.int64)
    keep = np.zeros(tris.shape[0], dtype=np.bool_)
    counts = np.zeros(ntiles, dtype=np.int64)
    _bin_count_kernel(
        vxlo, vxhi, vylo, vyhi, np.ascontiguousarray(ok), tris,
        width, height, tile, tiles_x, boxes, keep, counts,
    )
    tile_starts = np.zeros(ntiles + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_starts[1:])
    tile_tris = np.empty(int(tile_starts[-1]), dtype=np.int64)
    cursor = np.zeros(ntiles, dtype=np.int64)
    # ascending k keeps each tile's list sorted by triangle id
    _bin_fill_kernel(boxes, keep, tile, tiles_x, tile_starts, cursor, tile_tris)
    return boxes, tile_starts, tile_tris, tiles_x


def _raster_layer(scene, camera, layer, out_size, tile, depth, tri_id, bary):
    """Rasterize one layer into preallocated depth/id/barycentric planes."""
    height, width = out_size
    cam, xy, ok = _project_vertices(scene, camera, layer)
    tris = scene.meshes.triangles
    boxes, tile_starts, tile_tris, tiles_x = _bin_triangles(xy, ok, tris, width, height, tile)
    z = np.ascontiguousarray(cam[:, 2])
    _raster_kernel(
        xy, z, tris, boxes, tile_starts, tile_tris, tiles_x, tile, height, width, depth, tri_id, bary
    )
    return cam, xy


def rasterize(
    scene: TexturedScene,
    camera: PosedCamera,
    out_size=None,
    tile: int = DEFAULT_TILE,
    threads: int | None = None,
) -> FragmentBuffer:
    """Rasterize every layer of the scene into the given camera.

    Per (pixel, layer) the nearest triangle wins, ties by lowest id.
    threads limits the worker count for this call; the output is identical
    for any tile size or thread count.
    """
    if out_size is None:
        out_size = (camera.intrinsics.height, camera.intrinsics.width)
    height, width = out_size
    count = scene.layer_count
    depth = np.empty((count, height, width))
    bary = np.empty((count, height, width, 3))
    tri = np.empty((count, height, width), dtype=np.int64)
    rgba = np.empty((count, height, width, 4))
    old_threads = numba.get_num_threads()
    if threads is not None:
        # a limit, not a demand: never exceed what the platform offers
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        for j in range(count):
            _raster_layer(scene, camera, j, out_size, tile, depth[j], tri[j], bary[j])
            v = _vertex_rgba(scene, j)
            _attr_kernel(tri[j], bary[j], scene.meshes.triangles, v, rgba[j])
    finally:
        if threads is not None:
            numba.set_num_threads(old_threads)
    return FragmentBuffer(tri >= 0, depth, bary, tri, rgba)


def render(
    scene: TexturedScene,
    camera: PosedCamera,
    out_size=None,
    tile: int = DEFAULT_TILE,
    threads: int | None = None,
    order: str = "layer",
    keep_fragments: bool = False,
) -> RenderOutput:
    """Rasterize and composite the scene into the given camera.

    order selects the per-pixel compositing sequence: "layer" follows layer
    index front to back (the contract); "depth" sorts fragments by their
    interpolated depth and exists to measure how far an unordered scene
    deviates from the contract.
    """
    fragments = rasterize(scene, camera, out_size, tile, threads)
    if order == "layer":
        height, width = fragments.hit.shape[1:]
        color = np.empty((height, width, 3))
        acc = np.empty((height, width))
        _compose_kernel(fragments.rgba, fragments.triangle, color, acc)
        return RenderOutput(color, acc, fragments if keep_fragments else None)
    if order != "depth":
        raise ShapeMismatch(f"unknown compositing order {order!r}")
    rgb = fragments.rgba[..., :3]
    alpha = np.where(fragments.hit, fragments.rgba[..., 3], 0.0)
    key = np.where(fragments.hit, fragments.depth, np.inf)
    perm = np.argsort(key, axis=0, kind="stable")
    rgb = np.take_along_axis(rgb, perm[..., None], axis=0)
    alpha = np.take_along_axis(alpha, perm, axis=0)
    alpha = np.clip(alpha, 0.0, 1.0)
    color, acc = compose_over(rgb, alpha)
    return RenderOutput(color, acc, fragments if keep_fragments else None)


def _compose_backward(rgb, alpha, d_color, d_alpha):
    """Gradients of compose-over w.r.t. per-layer fragment rgb and alpha.

    Uses suffix accumulators instead of dividing by (1 - alpha), so fully
    opaque fragments are safe.
    """
    count = rgb.shape[0]
    keep = np.cumprod(1.0 - alpha, axis=0)
    transmit = np.concatenate([np.ones_like(alpha[:1]), keep[:-1]], axis=0)
    suffix_rgb = np.zeros_like(rgb)
    suffix_alpha = np.zeros_like(alpha)
    for k in range(count - 2, -1, -1):
        a_next = alpha[k + 1][..., None]
        suffix_rgb[k] = rgb[k + 1] * a_next + (1.0 - a_next) * suffix_rgb[k + 1]
        suffix_alpha[k] = alpha[k + 1] + (1.0 - alpha[k + 1]) * suffix_alpha[k + 1]
    d_rgb_k = d_color[None] * (alpha * transmit)[..., None]
    d_alpha_k = transmit * (d_color[None] * (rgb - suffix_rgb)).sum(axis=-1)
    if d_alpha is not None:
        d_alpha_k = d_alpha_k + d_alpha[None] * transmit * (1.0 - suffix_alpha)
    return d_rgb_k, d_alpha_k


def _scatter_bilinear(target, at, values):
    """Transpose of bilinear_sample: accumulate values into target corners."""
    h, w = target.shape[:2]
    x = np.clip(at[..., 0], 0, w - 1)
    y = np.clip(at[..., 1], 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    np.add.at(target, (y0, x0), values * (1 - fx) * (1 - fy))
    np.add.at(target, (y0, x1), values * fx * (1 - fy))
    np.add.at(target, (y1, x0), values * (1 - fx) * fy)
    np.add.at(target, (y1, x1), values * fx * fy)


def render_backward(
    scene: TexturedScene,
    camera: PosedCamera,
    fragments: FragmentBuffer,
    d_color: np.ndarray,
    d_alpha: np.ndarray | None = None,
) -> RenderGradients:
    """Backpropagate an upstream color (and optional alpha) gradient.

    Coverage is frozen at the given fragment buffer; the chain runs through
    compose-over, barycentric attribute interpolation, the projection, and
    each vertex's motion along its fixed ray.  Accumulation order is fixed,
    so repeated calls are bit-identical.
    """
    meshes = scene.meshes
    count = scene.layer_count
    rgb = fragments.rgba[..., :3]
    alpha = np.where(fragments.hit, fragments.rgba[..., 3], 0.0)
    d_color = np.asarray(d_color, dtype=np.float64)
    d_rgb_k, d_alpha_k = _compose_backward(rgb, alpha, d_color, d_alpha)
    # misses contribute nothing regardless of upstream values
    d_frag = np.concatenate([d_rgb_k, d_alpha_k[..., None]], axis=-1)
    d_frag[~fragments.hit] = 0.0

    grid_h, grid_w = meshes.grid_size
    rays = ray_directions(meshes.layers[0].pixels, meshes.intrinsics).reshape(-1, 3)
    ray_cam = rays @ camera.pose.rotation.T
    fx = camera.intrinsics.fx
    fy = camera.intrinsics.fy
    tris = meshes.triangles

    d_depths = np.zeros((count, grid_h, grid_w))
    d_colors = np.zeros_like(scene.textures[..., :3])
    d_alphas = np.zeros_like(scene.textures[..., 3])
    for j in range(count):
        cam, xy, _ = _project_vertices(scene, camera, j)
        vert_rgba = _vertex_rgba(scene, j)
        d_vert_rgba = np.zeros_like(vert_rgba)
        d_vert_depth = np.zeros(vert_rgba.shape[0])
        _backward_kernel(
            fragments.triangle[j],
            fragments.bary[j],
            tris,
            xy,
            np.ascontiguousarray(cam),
            vert_rgba,
            np.ascontiguousarray(ray_cam),
            fx,
            fy,
            np.ascontiguousarray(d_frag[j]),
            d_vert_rgba,
            d_vert_depth,
        )
        d_depths[j] = d_vert_depth.reshape(grid_h, grid_w)
        pix = meshes.layers[j].pixels.reshape(-1, 2)
        scatter = np.zeros(scene.textures.shape[1:3] + (4,))
        _scatter_bilinear(scatter, pix, d_vert_rgba)
        d_colors[j] = scatter[..., :3]
        d_alphas[j] = scatter[..., 3]
    return RenderGradients(d_depths, d_colors, d_alphas)


@dataclass(frozen=True)
class GradientCheckReport:
    """Outcome of the finite-difference comparison for one parameter class."""

    parameter: str
    checked: int
    coverage_changed: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_err <= 1e-3


def _with_depths(scene: TexturedScene, depths: np.ndarray) -> TexturedScene:
    layer_set = DepthLayerSet(depths, "probe")
    meshes = mesh_layers(layer_set, scene.meshes.intrinsics)
    return TexturedScene(meshes, scene.textures)


def _with_textures(scene: TexturedScene, textures: np.ndarray) -> TexturedScene:
    return TexturedScene(scene.meshes, textures)


def fd_gradcheck(
    scene: TexturedScene,
    camera: PosedCamera,
    parameter: str = "depths",
    probes: int = 20,
    step: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> GradientCheckReport:
    """Compare analytic gradients against central finite differences.

    Probes perturb one random scalar (a vertex depth, a texel alpha, or a
    texel color channel) by +-step.  Probes that change triangle coverage
    are counted and skipped: the gradient is defined with frozen coverage
    and a finite difference across a visibility flip measures nothing.
    """
    if parameter not in ("depths", "alphas", "colors"):
        raise ShapeMismatch(f"unknown parameter class {parameter!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    base = rasterize(scene, camera)
    height, width = base.hit.shape[1:]
    w_color = rng.standard_normal((height, width, 3))
    w_alpha = rng.standard_normal((height, width))
    grads = render_backward(scene, camera, base, w_color, w_alpha)

    def loss(buf: FragmentBuffer) -> float:
        rgb = buf.rgba[..., :3]
        alpha = np.where(buf.hit, buf.rgba[..., 3], 0.0)
        color, acc = compose_over(rgb, np.clip(alpha, 0.0, 1.0))
        return float((color * w_color).sum() + (acc * w_alpha).sum())

    depths = scene.meshes.depth_stack()
    textures = scene.textures
    checked = 0
    flipped = 0
    worst = 0.0
    for _ in range(probes):
        if parameter == "depths":
            idx = (
                rng.integers(scene.layer_count),
                rng.integers(depths.shape[1]),
                rng.integers(depths.shape[2]),
            )
            analytic = grads.depths[idx]
            lo, hi = depths.copy(), depths.copy()
            lo[idx] -= step
            hi[idx] += step
            plus = rasterize(_with_depths(scene, hi), camera)
            minus = rasterize(_with_depths(scene, lo), camera)
        else:
            channel = rng.integers(3) if parameter == "colors" else 3
            idx = (
                rng.integers(scene.layer_count),
                rng.integers(textures.shape[1]),
                rng.integers(textures.shape[2]),
                channel,
            )
            if not step < textures[idx] < 1.0 - step:
                continue
            analytic = grads.colors[idx[:3] + (channel,)] if parameter == "colors" else grads.alphas[idx[:3]]
            lo, hi = textures.copy(), textures.copy()
            lo[idx] -= step
            hi[idx] += step
            plus = rasterize(_with_textures(scene, hi), camera)
            minus = rasterize(_with_textures(scene, lo), camera)
        same = (
            np.array_equal(plus.triangle, base.triangle)
            and np.array_equal(minus.triangle, base.triangle)
        )
        if not same:
            flipped += 1
            continue
        fd = (loss(plus) - loss(minus)) / (2.0 * step)
        scale = max(abs(analytic), abs(fd))
        if scale > 1e-8:
            worst = max(worst, abs(analytic - fd) / scale)
        checked += 1
    return GradientCheckReport(parameter, checked, flipped, worst)
