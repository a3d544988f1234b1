/** Layer mesh construction from archive depth grids.
 *
 * Each layer is the same fixed grid-quad triangulation: vertices at the
 * grid's texel centers mapped into image pixel coordinates, every quad
 * split along the diagonal named by the manifest. Vertex order, triangle
 * order and winding replicate the archive producer so index buffers can be
 * compared across implementations.
 */

import { FormatError, type Intrinsics, type SceneData } from "./format.js";

/** Vertex pixel coordinates (x, y interleaved) at grid texel centers. */
export function gridPixels(
  gridH: number,
  gridW: number,
  imageH: number,
  imageW: number
): Float64Array {
  if (gridH < 2 || gridW < 2 || imageH < 1 || imageW < 1) {
    throw new FormatError(`grid ${gridH}x${gridW} in image ${imageH}x${imageW}`);
  }
  const out = new Float64Array(gridH * gridW * 2);
  const sx = imageW / gridW;
  const sy = imageH / gridH;
  for (let r = 0; r < gridH; r++) {
    const py = (r + 0.5) * sy - 0.5;
    for (let c = 0; c < gridW; c++) {
      out[2 * (r * gridW + c)] = (c + 0.5) * sx - 0.5;
      out[2 * (r * gridW + c) + 1] = py;
    }
  }
  return out;
}

/** Index triples for the fixed quad split, 2(h-1)(w-1) triangles.
 *
 * Quads are visited row-major; each emits its two triangles in the same
 * fixed order, both with positive winding.
 */
export function gridTriangles(
  gridH: number,
  gridW: number,
  diagonal: "tl-br" | "tr-bl"
): Uint32Array {
  if (gridH < 2 || gridW < 2) {
    throw new FormatError(`grid ${gridH}x${gridW} has no quads`);
  }
  const out = new Uint32Array(2 * (gridH - 1) * (gridW - 1) * 3);
  let k = 0;
  for (let r = 0; r < gridH - 1; r++) {
    for (let c = 0; c < gridW - 1; c++) {
      const v00 = r * gridW + c;
      const v01 = v00 + 1;
      const v10 = v00 + gridW;
      const v11 = v10 + 1;
      if (diagonal === "tl-br") {
        out[k++] = v00; out[k++] = v01; out[k++] = v11;
        out[k++] = v00; out[k++] = v11; out[k++] = v10;
      } else {
        out[k++] = v00; out[k++] = v01; out[k++] = v10;
        out[k++] = v01; out[k++] = v11; out[k++] = v10;
      }
    }
  }
  return out;
}

/** Unique undirected edges of the triangulation, for wireframe overlays. */
export function gridEdges(triangles: Uint32Array): Uint32Array {
  const seen = new Set<number>();
  const edges: number[] = [];
  const push = (a: number, b: number) => {
    const key = a < b ? a * 0x100000000 + b : b * 0x100000000 + a;
    if (!seen.has(key)) {
      seen.add(key);
      edges.push(a, b);
    }
  };
  for (let k = 0; k < triangles.length; k += 3) {
    push(triangles[k], triangles[k + 1]);
    push(triangles[k + 1], triangles[k + 2]);
    push(triangles[k + 2], triangles[k]);
  }
  return new Uint32Array(edges);
}

/** Camera-frame vertex positions for one layer: ray pixels backprojected
 * at the stored depths, (x, y, z) interleaved. */
export function layerPositions(
  pixels: Float64Array,
  depths: ArrayLike<number>,
  layer: number,
  intr: Intrinsics
): Float64Array {
  const count = pixels.length / 2;
  const out = new Float64Array(count * 3);
  const base = layer * count;
  for (let i = 0; i < count; i++) {
    const d = depths[base + i];
    out[3 * i] = ((pixels[2 * i] - intr.cx) / intr.fx) * d;
    out[3 * i + 1] = ((pixels[2 * i + 1] - intr.cy) / intr.fy) * d;
    out[3 * i + 2] = d;
  }
  return out;
}

/** Texture coordinates for the vertices: texel centers in [0, 1]. */
export function layerTexCoords(pixels: Float64Array, textureW: number, textureH: number): Float32Array {
  const count = pixels.length / 2;
  const out = new Float32Array(count * 2);
  for (let i = 0; i < count; i++) {
    out[2 * i] = (pixels[2 * i] + 0.5) / textureW;
    out[2 * i + 1] = (pixels[2 * i + 1] + 0.5) / textureH;
  }
  return out;
}

/** Straight-alpha vertex colors in [0, 1]: the texture sampled bilinearly
 * at the vertex pixel, which is a plain lookup when the grid matches the
 * texture resolution. */
export function layerVertexColors(scene: SceneData, layer: number, pixels: Float64Array): Float64Array {
  const { textureHeight: h, textureWidth: w } = scene.manifest;
  const tex = scene.textures;
  const planeOffset = layer * h * w * 4;
  const count = pixels.length / 2;
  const out = new Float64Array(count * 4);
  for (let i = 0; i < count; i++) {
    const px = pixels[2 * i];
    const py = pixels[2 * i + 1];
    const x0 = Math.floor(px);
    const y0 = Math.floor(py);
    const fx = px - x0;
    const fy = py - y0;
    for (let c = 0; c < 4; c++) {
      let value: number;
      if (fx === 0 && fy === 0) {
        const xi = Math.min(Math.max(x0, 0), w - 1);
        const yi = Math.min(Math.max(y0, 0), h - 1);
        value = tex[planeOffset + (yi * w + xi) * 4 + c] / 255;
      } else {
        const xa = Math.min(Math.max(x0, 0), w - 1);
        const xb = Math.min(Math.max(x0 + 1, 0), w - 1);
        const ya = Math.min(Math.max(y0, 0), h - 1);
        const yb = Math.min(Math.max(y0 + 1, 0), h - 1);
        const t00 = tex[planeOffset + (ya * w + xa) * 4 + c] / 255;
        const t01 = tex[planeOffset + (ya * w + xb) * 4 + c] / 255;
        const t10 = tex[planeOffset + (yb * w + xa) * 4 + c] / 255;
        const t11 = tex[planeOffset + (yb * w + xb) * 4 + c] / 255;
        const top = t00 * (1 - fx) + t01 * fx;
        const bottom = t10 * (1 - fx) + t11 * fx;
        value = top * (1 - fy) + bottom * fy;
      }
      out[4 * i + c] = value;
    }
  }
  return out;
}

export interface LayerGeometry {
  positions: Float64Array;
  texCoords: Float32Array;
}

export interface SceneGeometry {
  layers: LayerGeometry[];
  triangles: Uint32Array;
  edges: Uint32Array;
  pixels: Float64Array;
}

/** All per-layer vertex buffers plus the shared index buffers. */
export function buildSceneGeometry(scene: SceneData): SceneGeometry {
  const m = scene.manifest;
  const pixels = gridPixels(m.gridHeight, m.gridWidth, m.intrinsics.height, m.intrinsics.width);
  const triangles = gridTriangles(m.gridHeight, m.gridWidth, m.diagonal);
  const edges = gridEdges(triangles);
  const layers: LayerGeometry[] = [];
  for (let j = 0; j < m.layerCount; j++) {
    layers.push({
      positions: layerPositions(pixels, scene.depths, j, m.intrinsics),
      texCoords: layerTexCoords(pixels, m.textureWidth, m.textureHeight),
    });
  }
  return { layers, triangles, edges, pixels };
}
