/** Interactive camera: orbit and free-fly modes plus a baseline slider.
 *
 * Every control path produces a rigid pose (reference frame -> camera
 * frame, X_cam = R X + t). Orbit keeps a target point and spherical
 * offsets; fly composes incremental rotations and axis moves onto the
 * current pose. The slider scales a configurable stereo side pose from 0
 * (reference) up to a magnification limit, linear in translation and
 * spherical in rotation.
 */

import {
  composePoses,
  identityPose,
  interpolatePose,
  matMul,
  matVec,
  rotationX,
  rotationY,
  type Mat3,
  type Pose,
  type Vec3,
} from "./math.js";

export interface OrbitState {
  /** Reference-frame point the camera looks at. */
  target: Vec3;
  distance: number;
  /** Rotation about the target's vertical axis, radians. */
  yaw: number;
  /** Elevation, radians, clamped short of the poles. */
  pitch: number;
}

export const PITCH_LIMIT = Math.PI / 2 - 1e-3;

export function defaultOrbit(target: Vec3, distance: number): OrbitState {
  return { target: [...target] as Vec3, distance, yaw: 0, pitch: 0 };
}

/** Pose of the orbit camera: at `distance` from the target along the view
 * axis, looking at the target. Zero yaw and pitch is a camera on the
 * target's -z side looking down +z, which matches the reference camera
 * when the target sits on the optical axis. */
export function orbitPose(state: OrbitState): Pose {
  const rotation = matMul(rotationX(state.pitch), rotationY(state.yaw));
  const rotated = matVec(rotation, state.target);
  return {
    rotation,
    translation: [-rotated[0], -rotated[1], state.distance - rotated[2]],
  };
}

export function orbitDrag(state: OrbitState, dYaw: number, dPitch: number): OrbitState {
  return {
    ...state,
    yaw: state.yaw + dYaw,
    pitch: Math.min(Math.max(state.pitch + dPitch, -PITCH_LIMIT), PITCH_LIMIT),
  };
}

export function orbitDolly(state: OrbitState, factor: number): OrbitState {
  return { ...state, distance: Math.max(state.distance * factor, 1e-3) };
}

export interface FlyInput {
  /** Camera-frame translation: +x right, +y down, +z forward. */
  move: Vec3;
  yaw: number;
  pitch: number;
}

/** One fly-mode step: look around, then move along the new camera axes. */
export function flyStep(pose: Pose, input: FlyInput): Pose {
  const look: Mat3 = matMul(rotationX(input.pitch), rotationY(input.yaw));
  const turned = composePoses({ rotation: look, translation: [0, 0, 0] }, pose);
  return {
    rotation: turned.rotation,
    translation: [
      turned.translation[0] - input.move[0],
      turned.translation[1] - input.move[1],
      turned.translation[2] - input.move[2],
    ],
  };
}

export interface SliderConfig {
  /** Pose of the stereo side camera relative to the reference. */
  sidePose: Pose;
  /** Largest multiple of the side pose the slider reaches. */
  maxMagnification: number;
}

export function defaultSlider(baseline = 0.12, maxMagnification = 5): SliderConfig {
  const sidePose = identityPose();
  sidePose.translation = [-baseline, 0, 0];
  return { sidePose, maxMagnification };
}

/** Camera pose for a slider position in [0, 1]: 0 is the reference pose,
 * 1 is the side pose magnified `maxMagnification` times. */
export function sliderPose(config: SliderConfig, position: number): Pose {
  const clamped = Math.min(Math.max(position, 0), 1);
  return interpolatePose(config.sidePose, clamped * config.maxMagnification);
}

/** Slider pose seen from an interactive base pose: the magnified stereo
 * offset applied on top of wherever the user has flown or orbited. */
export function sliderOver(base: Pose, config: SliderConfig, position: number): Pose {
  return composePoses(sliderPose(config, position), base);
}
