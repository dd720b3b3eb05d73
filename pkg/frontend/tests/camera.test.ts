import { describe, expect, it } from "vitest";

import {
  MAX_PITCH_DEG,
  MIN_DISTANCE,
  MIN_PITCH_DEG,
  OrbitCamera,
  wrapDegrees,
} from "../src/camera.js";
import { validateCommand, Vec3 } from "../src/commands.js";

// Independent oracle: build the eye position as target + Ry(yaw) * Rx(-pitch)
// applied to (0, 0, distance), using explicit rotation matrices rather than
// the spherical shortcut the implementation uses.
type Mat3 = number[][];

function rotY(deg: number): Mat3 {
  const r = (deg * Math.PI) / 180;
  return [
    [Math.cos(r), 0, Math.sin(r)],
    [0, 1, 0],
    [-Math.sin(r), 0, Math.cos(r)],
  ];
}

function rotX(deg: number): Mat3 {
  const r = (deg * Math.PI) / 180;
  return [
    [1, 0, 0],
    [0, Math.cos(r), -Math.sin(r)],
    [0, Math.sin(r), Math.cos(r)],
  ];
}

function apply(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

function oraclePosition(
  target: Vec3,
  distance: number,
  yawDeg: number,
  pitchDeg: number,
): Vec3 {
  const local = apply(rotX(-pitchDeg), [0, 0, distance]);
  const world = apply(rotY(yawDeg), local);
  return [target[0] + world[0], target[1] + world[1], target[2] + world[2]];
}

function expectVecClose(got: Vec3, want: Vec3, digits = 12): void {
  for (let i = 0; i < 3; i++) {
    expect(got[i]).toBeCloseTo(want[i], digits);
  }
}

describe("orbit position", () => {
  it("matches frozen hand-computed poses", () => {
    // yaw 0, pitch 0 looks down -Z from +Z.
    expectVecClose(
      new OrbitCamera({ distance: 10 }).position,
      [0, 0, 10],
    );
    // yaw 90 swings the eye to +X.
    expectVecClose(
      new OrbitCamera({ distance: 10, yawDeg: 90 }).position,
      [10, 0, 0],
    );
    // yaw 180 puts it behind, yaw -90 at -X.
    expectVecClose(
      new OrbitCamera({ distance: 2, yawDeg: 180 }).position,
      [0, 0, -2],
    );
    expectVecClose(
      new OrbitCamera({ distance: 2, yawDeg: -90 }).position,
      [-2, 0, 0],
    );
    // Frozen general pose: target (1,2,3), d=2, yaw 30, pitch 45.
    expectVecClose(
      new OrbitCamera({
        target: [1, 2, 3],
        distance: 2,
        yawDeg: 30,
        pitchDeg: 45,
      }).position,
      [1.7071067811865476, 3.414213562373095, 4.224744871391589],
    );
  });

  it("matches the rotation-matrix oracle across the pose space", () => {
    let seed = 0x2f6e2b1;
    const rand = (): number => {
      // xorshift32; deterministic across runs.
      seed ^= seed << 13;
      seed ^= seed >>> 17;
      seed ^= seed << 5;
      seed >>>= 0;
      return seed / 0x100000000;
    };
    for (let i = 0; i < 500; i++) {
      const target: Vec3 = [
        (rand() - 0.5) * 200,
        (rand() - 0.5) * 200,
        (rand() - 0.5) * 200,
      ];
      const distance = 1e-3 + rand() * 500;
      const yawDeg = (rand() - 0.5) * 720;
      const pitchDeg = (rand() - 0.5) * 176;
      const cam = new OrbitCamera({ target, distance, yawDeg, pitchDeg });
      const want = oraclePosition(target, distance, yawDeg, pitchDeg);
      for (let k = 0; k < 3; k++) {
        expect(Math.abs(cam.position[k] - want[k])).toBeLessThan(1e-9);
      }
    }
  });

  it("keeps the eye exactly distance away from the target", () => {
    const cam = new OrbitCamera({
      target: [5, -3, 2],
      distance: 7,
      yawDeg: 123,
      pitchDeg: -45,
    });
    const p = cam.position;
    const d = Math.hypot(p[0] - 5, p[1] + 3, p[2] - 2);
    expect(d).toBeCloseTo(7, 12);
  });
});

describe("interaction", () => {
  it("accumulates orbit deltas and wraps yaw", () => {
    const cam = new OrbitCamera();
    cam.orbit(100, 10);
    cam.orbit(100, 10);
    expect(cam.yawDeg).toBeCloseTo(-160, 12); // 200 wrapped into (-180, 180]
    expect(cam.pitchDeg).toBe(20);
    expect(wrapDegrees(540)).toBe(180);
    expect(wrapDegrees(-180)).toBe(180);
    expect(wrapDegrees(-190)).toBe(170);
  });

  it("clamps pitch short of the poles", () => {
    const cam = new OrbitCamera();
    cam.orbit(0, 500);
    expect(cam.pitchDeg).toBe(MAX_PITCH_DEG);
    cam.orbit(0, -5000);
    expect(cam.pitchDeg).toBe(MIN_PITCH_DEG);
    // The up vector stays +Y, so the view must never flip over the pole.
    expect(Math.abs(cam.pitchDeg)).toBeLessThan(90);
  });

  it("clamps zoom and rejects nonsense factors", () => {
    const cam = new OrbitCamera({ distance: 1 });
    cam.zoom(1e-12);
    expect(cam.distance).toBe(MIN_DISTANCE);
    cam.zoom(2);
    expect(cam.distance).toBeCloseTo(2 * MIN_DISTANCE, 15);
    expect(() => cam.zoom(0)).toThrow(RangeError);
    expect(() => cam.zoom(-1)).toThrow(RangeError);
    expect(() => cam.zoom(NaN)).toThrow(RangeError);
  });

  it("pans in the screen plane without changing the orbit radius", () => {
    const cam = new OrbitCamera({ distance: 5, yawDeg: 40, pitchDeg: 25 });
    const before = cam.position;
    cam.pan(3, -2);
    const after = cam.position;
    const moved = Math.hypot(
      after[0] - before[0],
      after[1] - before[1],
      after[2] - before[2],
    );
    // Eye and target translate together by the pan vector: |(3, -2)| = sqrt(13).
    expect(moved).toBeCloseTo(Math.hypot(3, 2), 12);
    const p = cam.position;
    const t = cam.target;
    expect(Math.hypot(p[0] - t[0], p[1] - t[1], p[2] - t[2])).toBeCloseTo(5, 12);
  });

  it("frames a volume extent looking down -Z", () => {
    const cam = new OrbitCamera({ yawDeg: 77, pitchDeg: -30, distance: 99 });
    cam.frame([100, 50, 25]);
    expectVecClose(cam.position, [0, 0, 200]);
  });
});

describe("set_camera command", () => {
  it("emits a schema-valid command with degrees fov and +Y up", () => {
    const cam = new OrbitCamera({
      target: [1, 2, 3],
      distance: 10,
      yawDeg: 45,
      pitchDeg: 10,
      fovDeg: 60,
    });
    const cmd = cam.command();
    expect(() => validateCommand(cmd)).not.toThrow();
    expect(cmd.cmd).toBe("set_camera");
    expect(cmd.up).toEqual([0, 1, 0]);
    expect(cmd.fov).toBe(60);
    expect(cmd.target).toEqual([1, 2, 3]);
    const pos = cmd.position as number[];
    expectVecClose(
      [pos[0], pos[1], pos[2]],
      oraclePosition([1, 2, 3], 10, 45, 10),
    );
  });

  it("clamps fov into the range the service accepts", () => {
    expect(new OrbitCamera({ fovDeg: 0 }).fovDeg).toBe(1);
    expect(new OrbitCamera({ fovDeg: 1000 }).fovDeg).toBe(179);
    expect(() =>
      validateCommand(new OrbitCamera({ fovDeg: 0 }).command()),
    ).not.toThrow();
  });
});
