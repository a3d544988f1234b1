/** Shared fixture loading for the viewer tests.
 *
 * tests/fixtures/scene.lms is a four-layer 48x64 archive produced by the
 * command-line exporter; frame_reference.ppm and frame_shifted.ppm are that
 * exporter's renders of the same archive at the two poses stored in
 * trajectory.txt (identity, and a 0.15 shift along -x).
 */

import { readFileSync } from "node:fs";
import { decodeScene, type SceneData } from "../src/format.js";
import { poseFromRow, type Pose } from "../src/math.js";

export function fixturePath(name: string): URL {
  return new URL(`./fixtures/${name}`, import.meta.url);
}

export function fixtureBytes(name: string): ArrayBuffer {
  const buf = readFileSync(fixturePath(name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

export function fixtureText(name: string): string {
  return readFileSync(fixturePath(name), "utf8");
}

export function loadFixtureScene(): SceneData {
  return decodeScene(
    fixtureText("scene.lms/manifest.json"),
    fixtureBytes("scene.lms/depths.bin"),
    fixtureBytes("scene.lms/textures.bin")
  );
}

export interface PpmImage {
  width: number;
  height: number;
  /** (H, W, 3) row-major RGB bytes. */
  data: Uint8Array;
}

/** Minimal binary P6 reader for the fixture frames. */
export function parsePpm(bytes: ArrayBuffer): PpmImage {
  const view = new Uint8Array(bytes);
  const tokens: string[] = [];
  let at = 0;
  while (tokens.length < 4) {
    while (at < view.length && (view[at] === 32 || view[at] === 10 || view[at] === 13 || view[at] === 9)) {
      at++;
    }
    if (at < view.length && view[at] === 35) {
      while (at < view.length && view[at] !== 10) {
        at++;
      }
      continue;
    }
    let start = at;
    while (at < view.length && !(view[at] === 32 || view[at] === 10 || view[at] === 13 || view[at] === 9)) {
      at++;
    }
    tokens.push(String.fromCharCode(...view.subarray(start, at)));
  }
  if (tokens[0] !== "P6") {
    throw new Error(`not a binary PPM: magic ${tokens[0]}`);
  }
  const width = Number(tokens[1]);
  const height = Number(tokens[2]);
  const maxval = Number(tokens[3]);
  if (maxval !== 255) {
    throw new Error(`unsupported maxval ${maxval}`);
  }
  at++;
  const data = view.subarray(at, at + width * height * 3);
  if (data.length !== width * height * 3) {
    throw new Error("truncated PPM payload");
  }
  return { width, height, data: new Uint8Array(data) };
}

export function fixturePoses(): Pose[] {
  return fixtureText("trajectory.txt")
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
    .map((line) => poseFromRow(line.split(/\s+/).map(Number)));
}
