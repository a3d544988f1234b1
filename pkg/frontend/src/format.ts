/** Layered-mesh scene archive (.lms): manifest schema and buffer decoding.
 *
 * An archive is a directory of three files: `manifest.json` describing the
 * scene, `depths.bin` (float32 little-endian, layer-major row-major depth
 * grids) and `textures.bin` (uint8 RGBA, straight alpha). Every malformed
 * input raises FormatError with a message naming the offending field.
 */

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface BufferDescriptor {
  file: string;
  dtype: string;
  shape: number[];
  byteLength: number;
  sha256: string;
}

export interface Manifest {
  version: number;
  layerCount: number;
  gridHeight: number;
  gridWidth: number;
  textureHeight: number;
  textureWidth: number;
  diagonal: "tl-br" | "tr-bl";
  intrinsics: Intrinsics;
  depthRange: [number, number];
  depths: BufferDescriptor;
  textures: BufferDescriptor;
}

export interface SceneData {
  manifest: Manifest;
  /** (L, gh, gw) depth grids, layer-major row-major. */
  depths: Float32Array;
  /** (L, H, W, 4) straight-alpha texels. */
  textures: Uint8Array;
}

function asRecord(value: unknown, where: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new FormatError(`${where}: expected an object`);
  }
  return value as Record<string, unknown>;
}

function numberField(obj: Record<string, unknown>, key: string, where: string): number {
  const v = obj[key];
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new FormatError(`${where}: missing or non-numeric field '${key}'`);
  }
  return v;
}

function intField(obj: Record<string, unknown>, key: string, where: string): number {
  const v = numberField(obj, key, where);
  if (!Number.isInteger(v)) {
    throw new FormatError(`${where}: field '${key}' must be an integer, got ${v}`);
  }
  return v;
}

function stringField(obj: Record<string, unknown>, key: string, where: string): string {
  const v = obj[key];
  if (typeof v !== "string") {
    throw new FormatError(`${where}: missing or non-string field '${key}'`);
  }
  return v;
}

function parseDescriptor(value: unknown, where: string): BufferDescriptor {
  const obj = asRecord(value, where);
  const shapeRaw = obj["shape"];
  if (!Array.isArray(shapeRaw) || shapeRaw.some((d) => !Number.isInteger(d) || (d as number) < 1)) {
    throw new FormatError(`${where}: field 'shape' must be a list of positive integers`);
  }
  return {
    file: stringField(obj, "file", where),
    dtype: stringField(obj, "dtype", where),
    shape: shapeRaw as number[],
    byteLength: intField(obj, "byte_length", where),
    sha256: stringField(obj, "sha256", where),
  };
}

function shapeBytes(shape: number[], bytesPerItem: number): number {
  return shape.reduce((a, b) => a * b, 1) * bytesPerItem;
}

/** Validate a decoded manifest.json value and normalize it to Manifest. */
export function parseManifest(raw: unknown): Manifest {
  const obj = asRecord(raw, "manifest");
  const format = stringField(obj, "format", "manifest");
  if (format !== "lms") {
    throw new FormatError(`manifest: format '${format}' is not 'lms'`);
  }
  const version = intField(obj, "version", "manifest");
  if (version !== 1) {
    throw new FormatError(`manifest: unsupported version ${version}`);
  }
  const layerCount = intField(obj, "layer_count", "manifest");
  if (layerCount < 1) {
    throw new FormatError(`manifest: layer_count must be >= 1, got ${layerCount}`);
  }
  const gridHeight = intField(obj, "grid_height", "manifest");
  const gridWidth = intField(obj, "grid_width", "manifest");
  if (gridHeight < 2 || gridWidth < 2) {
    throw new FormatError(`manifest: grid ${gridHeight}x${gridWidth} has no quads`);
  }
  const textureHeight = intField(obj, "texture_height", "manifest");
  const textureWidth = intField(obj, "texture_width", "manifest");
  if (textureHeight < 1 || textureWidth < 1) {
    throw new FormatError(`manifest: texture ${textureHeight}x${textureWidth} is empty`);
  }
  const diagonal = stringField(obj, "diagonal", "manifest");
  if (diagonal !== "tl-br" && diagonal !== "tr-bl") {
    throw new FormatError(`manifest: unknown diagonal '${diagonal}'`);
  }
  const intrRaw = asRecord(obj["intrinsics"], "manifest.intrinsics");
  const intrinsics: Intrinsics = {
    fx: numberField(intrRaw, "fx", "manifest.intrinsics"),
    fy: numberField(intrRaw, "fy", "manifest.intrinsics"),
    cx: numberField(intrRaw, "cx", "manifest.intrinsics"),
    cy: numberField(intrRaw, "cy", "manifest.intrinsics"),
    width: intField(intrRaw, "width", "manifest.intrinsics"),
    height: intField(intrRaw, "height", "manifest.intrinsics"),
  };
  if (intrinsics.fx <= 0 || intrinsics.fy <= 0) {
    throw new FormatError("manifest.intrinsics: focal lengths must be positive");
  }
  const rangeRaw = obj["depth_range"];
  if (!Array.isArray(rangeRaw) || rangeRaw.length !== 2 || rangeRaw.some((v) => typeof v !== "number")) {
    throw new FormatError("manifest: field 'depth_range' must be [near, far]");
  }
  const depthRange = rangeRaw as [number, number];
  if (!(depthRange[0] > 0) || !(depthRange[1] >= depthRange[0])) {
    throw new FormatError(`manifest: depth_range [${depthRange}] must satisfy 0 < near <= far`);
  }
  const buffers = asRecord(obj["buffers"], "manifest.buffers");
  const depths = parseDescriptor(buffers["depths"], "manifest.buffers.depths");
  const textures = parseDescriptor(buffers["textures"], "manifest.buffers.textures");
  if (depths.dtype !== "float32-le") {
    throw new FormatError(`manifest.buffers.depths: dtype '${depths.dtype}' is not 'float32-le'`);
  }
  if (textures.dtype !== "uint8") {
    throw new FormatError(`manifest.buffers.textures: dtype '${textures.dtype}' is not 'uint8'`);
  }
  const wantDepthShape = [layerCount, gridHeight, gridWidth];
  if (depths.shape.join(",") !== wantDepthShape.join(",")) {
    throw new FormatError(
      `manifest.buffers.depths: shape [${depths.shape}] does not match layers/grid [${wantDepthShape}]`
    );
  }
  const wantTexShape = [layerCount, textureHeight, textureWidth, 4];
  if (textures.shape.join(",") !== wantTexShape.join(",")) {
    throw new FormatError(
      `manifest.buffers.textures: shape [${textures.shape}] does not match layers/texture [${wantTexShape}]`
    );
  }
  if (depths.byteLength !== shapeBytes(depths.shape, 4)) {
    throw new FormatError(
      `manifest.buffers.depths: byte_length ${depths.byteLength} does not match shape [${depths.shape}]`
    );
  }
  if (textures.byteLength !== shapeBytes(textures.shape, 1)) {
    throw new FormatError(
      `manifest.buffers.textures: byte_length ${textures.byteLength} does not match shape [${textures.shape}]`
    );
  }
  return {
    version,
    layerCount,
    gridHeight,
    gridWidth,
    textureHeight,
    textureWidth,
    diagonal,
    intrinsics,
    depthRange,
    depths,
    textures,
  };
}

/** Parse manifest text and attach both binary buffers, length-checked. */
export function decodeScene(
  manifestText: string,
  depthBytes: ArrayBuffer,
  textureBytes: ArrayBuffer
): SceneData {
  let raw: unknown;
  try {
    raw = JSON.parse(manifestText);
  } catch (err) {
    throw new FormatError(`manifest: invalid JSON (${(err as Error).message})`);
  }
  const manifest = parseManifest(raw);
  if (depthBytes.byteLength !== manifest.depths.byteLength) {
    throw new FormatError(
      `${manifest.depths.file}: expected ${manifest.depths.byteLength} bytes, got ${depthBytes.byteLength}`
    );
  }
  if (textureBytes.byteLength !== manifest.textures.byteLength) {
    throw new FormatError(
      `${manifest.textures.file}: expected ${manifest.textures.byteLength} bytes, got ${textureBytes.byteLength}`
    );
  }
  const view = new DataView(depthBytes);
  const depths = new Float32Array(depthBytes.byteLength / 4);
  for (let i = 0; i < depths.length; i++) {
    depths[i] = view.getFloat32(4 * i, true);
  }
  for (let i = 0; i < depths.length; i++) {
    if (!(depths[i] > 0) || !Number.isFinite(depths[i])) {
      throw new FormatError(`${manifest.depths.file}: depth[${i}] = ${depths[i]} is not a positive finite value`);
    }
  }
  return { manifest, depths, textures: new Uint8Array(textureBytes) };
}

function hexDigest(bytes: ArrayBuffer): string {
  return Array.from(new Uint8Array(bytes))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

/** Check both buffer digests against the manifest; throws FormatError on mismatch. */
export async function verifyChecksums(
  manifest: Manifest,
  depthBytes: ArrayBuffer,
  textureBytes: ArrayBuffer
): Promise<void> {
  const pairs: Array<[BufferDescriptor, ArrayBuffer]> = [
    [manifest.depths, depthBytes],
    [manifest.textures, textureBytes],
  ];
  for (const [desc, bytes] of pairs) {
    const digest = hexDigest(await crypto.subtle.digest("SHA-256", bytes));
    if (digest !== desc.sha256) {
      throw new FormatError(`${desc.file}: sha256 ${digest} does not match manifest ${desc.sha256}`);
    }
  }
}

export type FetchLike = (url: string) => Promise<{
  ok: boolean;
  status: number;
  text(): Promise<string>;
  arrayBuffer(): Promise<ArrayBuffer>;
}>;

async function fetchOk(fetchFn: FetchLike, url: string) {
  let response: Awaited<ReturnType<FetchLike>>;
  try {
    response = await fetchFn(url);
  } catch (err) {
    throw new FormatError(`${url}: fetch failed (${(err as Error).message})`);
  }
  if (!response.ok) {
    throw new FormatError(`${url}: HTTP ${response.status}`);
  }
  return response;
}

/** Fetch an archive directory over HTTP and decode it. */
export async function loadArchive(
  baseUrl: string,
  fetchFn: FetchLike = fetch,
  checkDigests = true
): Promise<SceneData> {
  const base = baseUrl.replace(/\/+$/, "");
  const manifestText = await (await fetchOk(fetchFn, `${base}/manifest.json`)).text();
  let raw: unknown;
  try {
    raw = JSON.parse(manifestText);
  } catch (err) {
    throw new FormatError(`${base}/manifest.json: invalid JSON (${(err as Error).message})`);
  }
  const manifest = parseManifest(raw);
  const depthBytes = await (await fetchOk(fetchFn, `${base}/${manifest.depths.file}`)).arrayBuffer();
  const textureBytes = await (await fetchOk(fetchFn, `${base}/${manifest.textures.file}`)).arrayBuffer();
  if (checkDigests) {
    await verifyChecksums(manifest, depthBytes, textureBytes);
  }
  return decodeScene(manifestText, depthBytes, textureBytes);
}

/** Decode an archive from locally picked files (manifest.json + two .bin). */
export async function loadFromFiles(files: Iterable<File>): Promise<SceneData> {
  const byName = new Map<string, File>();
  for (const f of files) {
    byName.set(f.name, f);
  }
  const manifestFile = byName.get("manifest.json");
  if (!manifestFile) {
    throw new FormatError("file pick: no manifest.json among the selected files");
  }
  const manifestText = await manifestFile.text();
  let raw: unknown;
  try {
    raw = JSON.parse(manifestText);
  } catch (err) {
    throw new FormatError(`manifest.json: invalid JSON (${(err as Error).message})`);
  }
  const manifest = parseManifest(raw);
  const depthFile = byName.get(manifest.depths.file);
  const textureFile = byName.get(manifest.textures.file);
  if (!depthFile || !textureFile) {
    throw new FormatError(
      `file pick: manifest names '${manifest.depths.file}' and '${manifest.textures.file}', pick them together`
    );
  }
  const depthBytes = await depthFile.arrayBuffer();
  const textureBytes = await textureFile.arrayBuffer();
  await verifyChecksums(manifest, depthBytes, textureBytes);
  return decodeScene(manifestText, depthBytes, textureBytes);
}
