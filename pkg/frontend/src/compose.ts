/** CPU reference renderer: nearest fragment per layer, then front-to-back
 * compose-over across layers in layer-index order.
 *
 * This is the same algorithm the GPU path implements with depth testing and
 * fixed-function blending; running it on the CPU gives a frame that can be
 * compared pixel-for-pixel against the archive producer's renderer. The
 * arithmetic follows that renderer operation for operation (same edge
 * functions, same perspective-correct barycentrics, same strict depth test,
 * same sequential compose) so float64 results agree to the last bit.
 */

import type { SceneData } from "./format.js";
import { gridPixels, gridTriangles, layerVertexColors } from "./mesh.js";
import type { Pose } from "./math.js";

const NEAR_CLIP = 1e-9;

export interface CpuFrame {
  width: number;
  height: number;
  /** (H, W, 3) row-major RGB in [0, 1]. */
  color: Float64Array;
  /** (H, W) accumulated opacity. */
  alpha: Float64Array;
}

interface ProjectedLayer {
  /** Screen x, y per vertex. */
  xy: Float64Array;
  /** Camera-frame z per vertex. */
  z: Float64Array;
  ok: Uint8Array;
}

function projectLayer(
  pixels: Float64Array,
  depths: ArrayLike<number>,
  layer: number,
  scene: SceneData,
  pose: Pose
): ProjectedLayer {
  const intr = scene.manifest.intrinsics;
  const r = pose.rotation;
  const t = pose.translation;
  const count = pixels.length / 2;
  const xy = new Float64Array(count * 2);
  const z = new Float64Array(count);
  const ok = new Uint8Array(count);
  const base = layer * count;
  for (let n = 0; n < count; n++) {
    const d = depths[base + n];
    const wx = ((pixels[2 * n] - intr.cx) / intr.fx) * d;
    const wy = ((pixels[2 * n + 1] - intr.cy) / intr.fy) * d;
    const zx = wx * r[0] + wy * r[1] + d * r[2] + t[0];
    const zy = wx * r[3] + wy * r[4] + d * r[5] + t[1];
    const zz = wx * r[6] + wy * r[7] + d * r[8] + t[2];
    const good = zz > NEAR_CLIP;
    ok[n] = good ? 1 : 0;
    const sz = good ? zz : 1.0;
    xy[2 * n] = (intr.fx * zx) / sz + intr.cx;
    xy[2 * n + 1] = (intr.fy * zy) / sz + intr.cy;
    z[n] = zz;
  }
  return { xy, z, ok };
}

function clip1e9(v: number): number {
  return Math.min(Math.max(v, -1e9), 1e9);
}

/** Rasterize one layer into per-pixel depth/triangle/barycentric buffers.
 * Triangles are scanned in ascending id with a strict depth test, so the
 * first nearest fragment wins ties exactly as in the producer. */
function rasterLayer(
  proj: ProjectedLayer,
  tris: Uint32Array,
  width: number,
  height: number,
  depthBuf: Float64Array,
  triBuf: Int32Array,
  baryBuf: Float64Array
): void {
  depthBuf.fill(Infinity);
  triBuf.fill(-1);
  baryBuf.fill(0);
  const { xy, z, ok } = proj;
  const triCount = tris.length / 3;
  for (let k = 0; k < triCount; k++) {
    const i0 = tris[3 * k];
    const i1 = tris[3 * k + 1];
    const i2 = tris[3 * k + 2];
    if (!(ok[i0] && ok[i1] && ok[i2])) {
      continue;
    }
    const x0 = xy[2 * i0];
    const y0 = xy[2 * i0 + 1];
    const x1 = xy[2 * i1];
    const y1 = xy[2 * i1 + 1];
    const x2 = xy[2 * i2];
    const y2 = xy[2 * i2 + 1];
    let xlo = Math.min(Math.ceil(clip1e9(x0)), Math.ceil(clip1e9(x1)), Math.ceil(clip1e9(x2)));
    let xhi = Math.max(Math.floor(clip1e9(x0)), Math.floor(clip1e9(x1)), Math.floor(clip1e9(x2)));
    let ylo = Math.min(Math.ceil(clip1e9(y0)), Math.ceil(clip1e9(y1)), Math.ceil(clip1e9(y2)));
    let yhi = Math.max(Math.floor(clip1e9(y0)), Math.floor(clip1e9(y1)), Math.floor(clip1e9(y2)));
    xlo = Math.max(xlo, 0);
    ylo = Math.max(ylo, 0);
    xhi = Math.min(xhi, width - 1);
    yhi = Math.min(yhi, height - 1);
    if (xlo > xhi || ylo > yhi) {
      continue;
    }
    const z0 = z[i0];
    const z1 = z[i1];
    const z2 = z[i2];
    for (let yy = ylo; yy <= yhi; yy++) {
      const py = yy;
      for (let xx = xlo; xx <= xhi; xx++) {
        const px = xx;
        const a0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
        const a1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2);
        const a2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
        const area = a0 + a1 + a2;
        if (area === 0) {
          continue;
        }
        const insidePos = a0 >= 0 && a1 >= 0 && a2 >= 0;
        const insideNeg = a0 <= 0 && a1 <= 0 && a2 <= 0;
        if (!insidePos && !insideNeg) {
          continue;
        }
        const l0 = a0 / area;
        const l1 = a1 / area;
        const l2 = a2 / area;
        const wsum = l0 / z0 + l1 / z1 + l2 / z2;
        if (wsum <= 0) {
          continue;
        }
        const d = 1 / wsum;
        const at = yy * width + xx;
        if (d < depthBuf[at]) {
          depthBuf[at] = d;
          triBuf[at] = k;
          baryBuf[3 * at] = (l0 / z0) * d;
          baryBuf[3 * at + 1] = (l1 / z1) * d;
          baryBuf[3 * at + 2] = (l2 / z2) * d;
        }
      }
    }
  }
}

/** Render an archive scene at a pose with the archive's own intrinsics. */
export function renderCPU(scene: SceneData, pose: Pose): CpuFrame {
  const m = scene.manifest;
  const width = m.intrinsics.width;
  const height = m.intrinsics.height;
  const pixels = gridPixels(m.gridHeight, m.gridWidth, m.intrinsics.height, m.intrinsics.width);
  const tris = gridTriangles(m.gridHeight, m.gridWidth, m.diagonal);
  const npix = width * height;

  const color = new Float64Array(npix * 3);
  const alpha = new Float64Array(npix);
  const trans = new Float64Array(npix).fill(1);
  const depthBuf = new Float64Array(npix);
  const triBuf = new Int32Array(npix);
  const baryBuf = new Float64Array(npix * 3);

  for (let layer = 0; layer < m.layerCount; layer++) {
    const proj = projectLayer(pixels, scene.depths, layer, scene, pose);
    rasterLayer(proj, tris, width, height, depthBuf, triBuf, baryBuf);
    const colors = layerVertexColors(scene, layer, pixels);
    for (let at = 0; at < npix; at++) {
      const k = triBuf[at];
      if (k < 0) {
        continue;
      }
      const i0 = tris[3 * k];
      const i1 = tris[3 * k + 1];
      const i2 = tris[3 * k + 2];
      const b0 = baryBuf[3 * at];
      const b1 = baryBuf[3 * at + 1];
      const b2 = baryBuf[3 * at + 2];
      let a = colors[4 * i0 + 3] * b0 + colors[4 * i1 + 3] * b1 + colors[4 * i2 + 3] * b2;
      if (a < 0) {
        a = 0;
      } else if (a > 1) {
        a = 1;
      }
      const weight = a * trans[at];
      for (let c = 0; c < 3; c++) {
        const value = colors[4 * i0 + c] * b0 + colors[4 * i1 + c] * b1 + colors[4 * i2 + c] * b2;
        color[3 * at + c] += value * weight;
      }
      trans[at] *= 1 - a;
    }
  }
  for (let at = 0; at < npix; at++) {
    alpha[at] = 1 - trans[at];
  }
  return { width, height, color, alpha };
}

/** Quantize one channel to uint8 the way the producer writes PPM frames:
 * clip to [0, 1], scale by 255, round half to even. */
export function quantizeChannel(value: number): number {
  const v = Math.min(Math.max(value, 0), 1) * 255;
  const f = Math.floor(v);
  const frac = v - f;
  if (frac > 0.5) {
    return f + 1;
  }
  if (frac < 0.5) {
    return f;
  }
  return f % 2 === 0 ? f : f + 1;
}

/** Mean absolute difference against a uint8 RGB frame, in [0, 1] units. */
export function meanAbsDiff(frame: CpuFrame, rgb: Uint8Array): number {
  if (rgb.length !== frame.color.length) {
    throw new Error(`frame size mismatch: ${rgb.length} vs ${frame.color.length}`);
  }
  let total = 0;
  for (let i = 0; i < rgb.length; i++) {
    total += Math.abs(quantizeChannel(frame.color[i]) - rgb[i]);
  }
  return total / rgb.length / 255;
}
