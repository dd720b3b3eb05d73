/**
 * Orbit camera model.
 *
 * The camera sits on a sphere around a target point.  Yaw rotates the eye
 * around the world +Y axis (yaw 0 looks down -Z from +Z), pitch lifts it
 * toward the poles and is clamped short of them so the view never flips,
 * and the up vector is always world +Y.  `command()` turns the pose into a
 * `set_camera` message for the render service (fov in degrees).
 */

import { Command, setCamera, Vec3 } from "./commands.js";

export const MIN_PITCH_DEG = -89;
export const MAX_PITCH_DEG = 89;
export const MIN_FOV_DEG = 1;
export const MAX_FOV_DEG = 179;
export const MIN_DISTANCE = 1e-3;

export interface OrbitState {
  target: Vec3;
  distance: number;
  yawDeg: number;
  pitchDeg: number;
  fovDeg: number;
}

const DEFAULT_STATE: OrbitState = {
  target: [0, 0, 0],
  distance: 4,
  yawDeg: 0,
  pitchDeg: 0,
  fovDeg: 45,
};

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Wrap an angle to (-180, 180] so yaw never grows without bound. */
export function wrapDegrees(deg: number): number {
  let d = deg % 360;
  if (d <= -180) d += 360;
  if (d > 180) d -= 360;
  return d;
}

export class OrbitCamera {
  target: Vec3;
  distance: number;
  yawDeg: number;
  pitchDeg: number;
  fovDeg: number;

  constructor(state: Partial<OrbitState> = {}) {
    const s = { ...DEFAULT_STATE, ...state };
    this.target = [...s.target];
    this.distance = Math.max(MIN_DISTANCE, s.distance);
    this.yawDeg = wrapDegrees(s.yawDeg);
    this.pitchDeg = clamp(s.pitchDeg, MIN_PITCH_DEG, MAX_PITCH_DEG);
    this.fovDeg = clamp(s.fovDeg, MIN_FOV_DEG, MAX_FOV_DEG);
  }

  /** Rotate around the target; positive dYaw orbits east, dPitch lifts up. */
  orbit(dYawDeg: number, dPitchDeg: number): void {
    this.yawDeg = wrapDegrees(this.yawDeg + dYawDeg);
    this.pitchDeg = clamp(
      this.pitchDeg + dPitchDeg,
      MIN_PITCH_DEG,
      MAX_PITCH_DEG,
    );
  }

  /** Scale the orbit radius; factors < 1 move closer. */
  zoom(factor: number): void {
    if (!Number.isFinite(factor) || factor <= 0) {
      throw new RangeError("zoom factor must be positive");
    }
    this.distance = Math.max(MIN_DISTANCE, this.distance * factor);
  }

  /** Slide the target in the camera's screen plane (right, up). */
  pan(dRight: number, dUp: number): void {
    const [right, up] = this.basis();
    this.target = [
      this.target[0] + right[0] * dRight + up[0] * dUp,
      this.target[1] + right[1] * dRight + up[1] * dUp,
      this.target[2] + right[2] * dRight + up[2] * dUp,
    ];
  }

  /** Fit a volume of the given world extent: look at its center from +Z. */
  frame(worldExtent: Vec3): void {
    const radius = Math.max(...worldExtent) / 2;
    this.target = [0, 0, 0];
    this.distance = Math.max(MIN_DISTANCE, 4 * radius);
    this.yawDeg = 0;
    this.pitchDeg = 0;
  }

  /** Eye position on the orbit sphere. */
  get position(): Vec3 {
    const yaw = (this.yawDeg * Math.PI) / 180;
    const pitch = (this.pitchDeg * Math.PI) / 180;
    const planar = this.distance * Math.cos(pitch);
    return [
      this.target[0] + planar * Math.sin(yaw),
      this.target[1] + this.distance * Math.sin(pitch),
      this.target[2] + planar * Math.cos(yaw),
    ];
  }

  /** Camera-space right and up directions (unit vectors). */
  basis(): [Vec3, Vec3] {
    const yaw = (this.yawDeg * Math.PI) / 180;
    const pitch = (this.pitchDeg * Math.PI) / 180;
    const right: Vec3 = [Math.cos(yaw), 0, -Math.sin(yaw)];
    const up: Vec3 = [
      -Math.sin(pitch) * Math.sin(yaw),
      Math.cos(pitch),
      -Math.sin(pitch) * Math.cos(yaw),
    ];
    return [right, up];
  }

  command(): Command {
    return setCamera({
      position: this.position,
      target: this.target,
      up: [0, 1, 0],
      fovDeg: this.fovDeg,
    });
  }
}
