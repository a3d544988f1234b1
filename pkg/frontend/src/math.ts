/** Rigid transforms and camera math.
 *
 * Conventions match the archive producer: a pose maps reference-frame
 * points into camera frame as X_cam = R X + t, pixels follow
 * px = fx x/z + cx, py = fy y/z + cy with x right, y down, z forward.
 * Rotations are row-major 3x3 arrays.
 */

import type { Intrinsics } from "./format.js";

export type Vec3 = [number, number, number];
/** Row-major 3x3. */
export type Mat3 = [number, number, number, number, number, number, number, number, number];
/** (x, y, z, w). */
export type Quat = [number, number, number, number];

export interface Pose {
  rotation: Mat3;
  translation: Vec3;
}

export const IDENTITY_ROTATION: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

export function identityPose(): Pose {
  return { rotation: [...IDENTITY_ROTATION] as Mat3, translation: [0, 0, 0] };
}

export function clonePose(pose: Pose): Pose {
  return { rotation: [...pose.rotation] as Mat3, translation: [...pose.translation] as Vec3 };
}

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0) as Mat3;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let s = 0;
      for (let k = 0; k < 3; k++) {
        s += a[3 * i + k] * b[3 * k + j];
      }
      out[3 * i + j] = s;
    }
  }
  return out;
}

export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

export function transpose(m: Mat3): Mat3 {
  return [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]];
}

export function transformPoint(pose: Pose, p: Vec3): Vec3 {
  const r = matVec(pose.rotation, p);
  return [r[0] + pose.translation[0], r[1] + pose.translation[1], r[2] + pose.translation[2]];
}

/** first applied, then second: X -> R2 (R1 X + t1) + t2. */
export function composePoses(second: Pose, first: Pose): Pose {
  const rotation = matMul(second.rotation, first.rotation);
  const t = matVec(second.rotation, first.translation);
  return {
    rotation,
    translation: [
      t[0] + second.translation[0],
      t[1] + second.translation[1],
      t[2] + second.translation[2],
    ],
  };
}

export function invertPose(pose: Pose): Pose {
  const rt = transpose(pose.rotation);
  const t = matVec(rt, pose.translation);
  return { rotation: rt, translation: [-t[0], -t[1], -t[2]] };
}

export function rotationX(angle: number): Mat3 {
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  return [1, 0, 0, 0, c, -s, 0, s, c];
}

export function rotationY(angle: number): Mat3 {
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  return [c, 0, s, 0, 1, 0, -s, 0, c];
}

/** Largest absolute deviation of R^T R from the identity. */
export function orthonormalityError(m: Mat3): number {
  const g = matMul(transpose(m), m);
  let worst = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      worst = Math.max(worst, Math.abs(g[3 * i + j] - (i === j ? 1 : 0)));
    }
  }
  return worst;
}

export function determinant(m: Mat3): number {
  return (
    m[0] * (m[4] * m[8] - m[5] * m[7]) -
    m[1] * (m[3] * m[8] - m[5] * m[6]) +
    m[2] * (m[3] * m[7] - m[4] * m[6])
  );
}

export function quatFromMatrix(m: Mat3): Quat {
  const trace = m[0] + m[4] + m[8];
  let x: number, y: number, z: number, w: number;
  if (trace > 0) {
    const s = Math.sqrt(trace + 1) * 2;
    w = s / 4;
    x = (m[7] - m[5]) / s;
    y = (m[2] - m[6]) / s;
    z = (m[3] - m[1]) / s;
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const s = Math.sqrt(1 + m[0] - m[4] - m[8]) * 2;
    w = (m[7] - m[5]) / s;
    x = s / 4;
    y = (m[1] + m[3]) / s;
    z = (m[2] + m[6]) / s;
  } else if (m[4] > m[8]) {
    const s = Math.sqrt(1 + m[4] - m[0] - m[8]) * 2;
    w = (m[2] - m[6]) / s;
    x = (m[1] + m[3]) / s;
    y = s / 4;
    z = (m[5] + m[7]) / s;
  } else {
    const s = Math.sqrt(1 + m[8] - m[0] - m[4]) * 2;
    w = (m[3] - m[1]) / s;
    x = (m[2] + m[6]) / s;
    y = (m[5] + m[7]) / s;
    z = s / 4;
  }
  return [x, y, z, w];
}

export function matrixFromQuat(q: Quat): Mat3 {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  const x = q[0] / n;
  const y = q[1] / n;
  const z = q[2] / n;
  const w = q[3] / n;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
    2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
    2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
  ];
}

/** Shortest-arc spherical interpolation; falls back to lerp near zero angle. */
export function slerp(a: Quat, b: Quat, t: number): Quat {
  let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
  const bb: Quat = dot < 0 ? [-b[0], -b[1], -b[2], -b[3]] : [...b];
  dot = Math.abs(dot);
  let wa: number, wb: number;
  if (dot > 1 - 1e-10) {
    wa = 1 - t;
    wb = t;
  } else {
    const theta = Math.acos(Math.min(dot, 1));
    const s = Math.sin(theta);
    wa = Math.sin((1 - t) * theta) / s;
    wb = Math.sin(t * theta) / s;
  }
  const out: Quat = [
    wa * a[0] + wb * bb[0],
    wa * a[1] + wb * bb[1],
    wa * a[2] + wb * bb[2],
    wa * a[3] + wb * bb[3],
  ];
  const n = Math.hypot(out[0], out[1], out[2], out[3]);
  return [out[0] / n, out[1] / n, out[2] / n, out[3] / n];
}

/** Pose on the reference->target path: translation lerp, rotation slerp. */
export function interpolatePose(target: Pose, t: number): Pose {
  const q = slerp([0, 0, 0, 1], quatFromMatrix(target.rotation), t);
  return {
    rotation: matrixFromQuat(q),
    translation: [
      t * target.translation[0],
      t * target.translation[1],
      t * target.translation[2],
    ],
  };
}

/** Column-major 4x4 clip transform for WebGL, pixel centers at integers.
 *
 * Maps camera coordinates (y down, z forward) so that a point projecting to
 * pixel (px, py) lands at NDC ((px + 0.5) / w * 2 - 1, -((py + 0.5) / h * 2 - 1))
 * and depth z in [near, far] spans [-1, 1].
 */
export function projectionFromIntrinsics(
  intr: Intrinsics,
  near: number,
  far: number
): Float32Array {
  const w = intr.width;
  const h = intr.height;
  const out = new Float32Array(16);
  out[0] = (2 * intr.fx) / w;
  out[5] = -(2 * intr.fy) / h;
  out[8] = (2 * intr.cx + 1) / w - 1;
  out[9] = -((2 * intr.cy + 1) / h - 1);
  out[10] = (far + near) / (far - near);
  out[11] = 1;
  out[14] = (-2 * far * near) / (far - near);
  return out;
}

/** Column-major 4x4 rigid model-view matrix for WebGL from a pose. */
export function modelViewFromPose(pose: Pose): Float32Array {
  const r = pose.rotation;
  const t = pose.translation;
  return new Float32Array([
    r[0], r[3], r[6], 0,
    r[1], r[4], r[7], 0,
    r[2], r[5], r[8], 0,
    t[0], t[1], t[2], 1,
  ]);
}

/** Parse one 3x4 row-major pose line (12 whitespace-separated numbers). */
export function poseFromRow(values: ArrayLike<number>): Pose {
  if (values.length !== 12) {
    throw new Error(`pose row needs 12 numbers, got ${values.length}`);
  }
  const rotation: Mat3 = [
    values[0], values[1], values[2],
    values[4], values[5], values[6],
    values[8], values[9], values[10],
  ];
  return { rotation, translation: [values[3], values[7], values[11]] };
}
