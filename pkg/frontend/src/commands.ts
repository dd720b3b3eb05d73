/**
 * Client-to-server command construction and validation.
 *
 * Every command is a JSON object with a `cmd` field.  `validateCommand`
 * enforces the field names, types and value ranges the render service
 * accepts, so malformed commands fail locally instead of as a round-trip
 * error reply.
 */

export type Vec3 = readonly [number, number, number];

export interface TfPoint {
  x: number;
  rgba: readonly [number, number, number, number];
}

export interface Command {
  cmd: string;
  [field: string]: unknown;
}

export const FRAME_FORMATS = ["raw", "png"] as const;
export type FrameFormat = (typeof FRAME_FORMATS)[number];

export class CommandError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CommandError";
  }
}

function fail(msg: string): never {
  throw new CommandError(msg);
}

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function checkVec3(v: unknown, what: string): void {
  if (!Array.isArray(v) || v.length !== 3 || !v.every(isFiniteNumber)) {
    fail(`${what} must be an array of 3 finite numbers`);
  }
}

function checkCount(v: unknown, what: string): void {
  if (!isFiniteNumber(v) || !Number.isInteger(v) || v < 0) {
    fail(`${what} must be a non-negative integer`);
  }
}

function checkDimension(v: unknown, what: string): void {
  if (!isFiniteNumber(v) || !Number.isInteger(v) || v < 1) {
    fail(`${what} must be a positive integer`);
  }
}

function checkTfPoints(points: unknown): void {
  if (!Array.isArray(points) || points.length < 2) {
    fail("points must be an array of at least 2 control points");
  }
  let prev = -Infinity;
  for (const p of points) {
    if (typeof p !== "object" || p === null || Array.isArray(p)) {
      fail("each control point must be an object with x and rgba");
    }
    const { x, rgba } = p as { x?: unknown; rgba?: unknown };
    if (!isFiniteNumber(x) || x < 0 || x > 1) {
      fail("control point x must be a number in [0, 1]");
    }
    if (
      !Array.isArray(rgba) ||
      rgba.length !== 4 ||
      !rgba.every((c) => isFiniteNumber(c) && c >= 0 && c <= 1)
    ) {
      fail("control point rgba must be 4 numbers in [0, 1]");
    }
    if (x <= prev) {
      fail("control point positions must be strictly increasing");
    }
    prev = x;
  }
  if (points[0].x !== 0 || points[points.length - 1].x !== 1) {
    fail("control points must start at x=0 and end at x=1");
  }
}

type FieldCheck = (value: unknown, name: string) => void;

interface CommandSpec {
  required: Record<string, FieldCheck>;
  optional: Record<string, FieldCheck>;
  /** Extra cross-field validation after per-field checks. */
  extra?: (msg: Command) => void;
}

const checkString: FieldCheck = (v, name) => {
  if (typeof v !== "string" || v.length === 0) {
    fail(`${name} must be a non-empty string`);
  }
};

const checkBool: FieldCheck = (v, name) => {
  if (typeof v !== "boolean") {
    fail(`${name} must be a boolean`);
  }
};

const checkNumber: FieldCheck = (v, name) => {
  if (!isFiniteNumber(v)) {
    fail(`${name} must be a finite number`);
  }
};

const COMMAND_SPECS: Record<string, CommandSpec> = {
  ping: { required: {}, optional: {} },
  hello: { required: {}, optional: {} },
  stats: { required: {}, optional: {} },
  load_volume: {
    required: {},
    optional: {
      path: checkString,
      procedural: checkString,
      cache_mb: (v, n) => {
        checkCount(v, n);
        if ((v as number) < 1) fail(`${n} must be at least 1`);
      },
    },
    extra: (msg) => {
      const hasPath = "path" in msg;
      const hasProc = "procedural" in msg;
      if (hasPath === hasProc) {
        fail("load_volume needs exactly one of path or procedural");
      }
    },
  },
  set_camera: {
    required: {
      position: (v) => checkVec3(v, "position"),
      target: (v) => checkVec3(v, "target"),
    },
    optional: {
      up: (v) => checkVec3(v, "up"),
      fov: (v, n) => {
        checkNumber(v, n);
        if ((v as number) <= 0 || (v as number) >= 180) {
          fail("fov must be in (0, 180) degrees");
        }
      },
    },
  },
  set_transfer_function: {
    required: { points: (v) => checkTfPoints(v) },
    optional: {},
  },
  set_timepoint: {
    required: { t: (v) => checkCount(v, "t") },
    optional: {},
  },
  set_channel: {
    required: { c: (v) => checkCount(v, "c") },
    optional: {},
  },
  set_pipeline: {
    required: {},
    optional: {
      name: checkString,
      pipeline: (v, n) => {
        if (typeof v !== "object" || v === null || Array.isArray(v)) {
          fail(`${n} must be a pipeline description object`);
        }
      },
    },
    extra: (msg) => {
      const hasName = "name" in msg;
      const hasDesc = "pipeline" in msg;
      if (hasName === hasDesc) {
        fail("set_pipeline needs exactly one of name or pipeline");
      }
    },
  },
  set_settings: {
    required: {},
    optional: {
      width: (v) => checkDimension(v, "width"),
      height: (v) => checkDimension(v, "height"),
      step: (v, n) => {
        checkNumber(v, n);
        if ((v as number) <= 0) fail("step must be positive");
      },
      fixed_lod: (v, n) => {
        if (v !== null) checkCount(v, n);
      },
      threads: (v) => checkDimension(v, "threads"),
      filter: checkString,
      backend: (v, n) => {
        checkString(v, n);
        if (!["auto", "compiled", "python"].includes(v as string)) {
          fail("backend must be auto, compiled or python");
        }
      },
    },
  },
  request_frame: {
    required: {},
    optional: {
      format: (v, n) => {
        checkString(v, n);
        if (!FRAME_FORMATS.includes(v as FrameFormat)) {
          fail(`format must be one of ${FRAME_FORMATS.join(", ")}`);
        }
      },
    },
  },
  set_continuous: {
    required: { on: checkBool },
    optional: {},
  },
};

export const COMMAND_NAMES = Object.keys(COMMAND_SPECS);

/** Throw `CommandError` unless `msg` is a command the service accepts. */
export function validateCommand(msg: unknown): asserts msg is Command {
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    fail("command must be a JSON object");
  }
  const obj = msg as Command;
  if (typeof obj.cmd !== "string") {
    fail("command needs a string cmd field");
  }
  const spec = COMMAND_SPECS[obj.cmd];
  if (spec === undefined) {
    fail(`unknown command '${obj.cmd}'`);
  }
  for (const [name, check] of Object.entries(spec.required)) {
    if (!(name in obj)) {
      fail(`${obj.cmd} requires field ${name}`);
    }
    check(obj[name], name);
  }
  for (const [name, check] of Object.entries(spec.optional)) {
    if (name in obj) {
      check(obj[name], name);
    }
  }
  for (const name of Object.keys(obj)) {
    if (name !== "cmd" && !(name in spec.required) && !(name in spec.optional)) {
      fail(`${obj.cmd} does not accept field ${name}`);
    }
  }
  spec.extra?.(obj);
}

// ---------------------------------------------------------------------------
// Constructors.  Each returns a plain JSON object that passes validateCommand.

export function ping(): Command {
  return { cmd: "ping" };
}

export function hello(): Command {
  return { cmd: "hello" };
}

export function stats(): Command {
  return { cmd: "stats" };
}

export function loadVolume(opts: {
  path?: string;
  procedural?: string;
  cacheMb?: number;
}): Command {
  const msg: Command = { cmd: "load_volume" };
  if (opts.path !== undefined) msg.path = opts.path;
  if (opts.procedural !== undefined) msg.procedural = opts.procedural;
  if (opts.cacheMb !== undefined) msg.cache_mb = opts.cacheMb;
  validateCommand(msg);
  return msg;
}

export function setCamera(opts: {
  position: Vec3;
  target: Vec3;
  up?: Vec3;
  fovDeg?: number;
}): Command {
  const msg: Command = {
    cmd: "set_camera",
    position: [...opts.position],
    target: [...opts.target],
  };
  if (opts.up !== undefined) msg.up = [...opts.up];
  if (opts.fovDeg !== undefined) msg.fov = opts.fovDeg;
  validateCommand(msg);
  return msg;
}

export function setTransferFunction(points: readonly TfPoint[]): Command {
  const msg: Command = {
    cmd: "set_transfer_function",
    points: points.map((p) => ({ x: p.x, rgba: [...p.rgba] })),
  };
  validateCommand(msg);
  return msg;
}

export function setTimepoint(t: number): Command {
  const msg: Command = { cmd: "set_timepoint", t };
  validateCommand(msg);
  return msg;
}

export function setChannel(c: number): Command {
  const msg: Command = { cmd: "set_channel", c };
  validateCommand(msg);
  return msg;
}

export function setPipeline(name: string): Command {
  const msg: Command = { cmd: "set_pipeline", name };
  validateCommand(msg);
  return msg;
}

export function setSettings(opts: {
  width?: number;
  height?: number;
  step?: number;
  fixedLod?: number | null;
  threads?: number;
  filter?: string;
  backend?: "auto" | "compiled" | "python";
}): Command {
  const msg: Command = { cmd: "set_settings" };
  if (opts.width !== undefined) msg.width = opts.width;
  if (opts.height !== undefined) msg.height = opts.height;
  if (opts.step !== undefined) msg.step = opts.step;
  if (opts.fixedLod !== undefined) msg.fixed_lod = opts.fixedLod;
  if (opts.threads !== undefined) msg.threads = opts.threads;
  if (opts.filter !== undefined) msg.filter = opts.filter;
  if (opts.backend !== undefined) msg.backend = opts.backend;
  validateCommand(msg);
  return msg;
}

export function requestFrame(format?: FrameFormat): Command {
  const msg: Command = { cmd: "request_frame" };
  if (format !== undefined) msg.format = format;
  validateCommand(msg);
  return msg;
}

export function setContinuous(on: boolean): Command {
  const msg: Command = { cmd: "set_continuous", on };
  validateCommand(msg);
  return msg;
}
