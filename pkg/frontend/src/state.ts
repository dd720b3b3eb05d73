/**
 * Client-side bookkeeping for a streaming render session.
 *
 * The service interleaves binary frames with `frame_stats` JSON messages.
 * The tracker records both, checks that frame ids only ever increase, and
 * derives when the stream has converged: the last frame needed no fallback
 * data, wanted nothing that was missing, and no loads are still pending.
 */

import { Frame } from "./protocol.js";

export interface RenderStats {
  backend: string;
  mode: string;
  samples: number;
  fallbackSamples: number;
  wantedMissing: number;
  touchedBlocks: number;
  renderMs: number;
}

export interface FrameStats {
  frameId: number;
  render: RenderStats;
  /** Cache name -> pending load count. */
  pending: Record<string, number>;
}

function asCount(v: unknown, what: string): number {
  if (typeof v !== "number" || !Number.isFinite(v) || v < 0) {
    throw new TypeError(`${what} must be a non-negative number`);
  }
  return v;
}

/** Parse a `frame_stats` message from the service; throws on anything else. */
export function parseFrameStats(msg: unknown): FrameStats {
  if (typeof msg !== "object" || msg === null) {
    throw new TypeError("frame_stats must be an object");
  }
  const m = msg as Record<string, unknown>;
  if (m.cmd !== "frame_stats") {
    throw new TypeError(`expected frame_stats, got ${String(m.cmd)}`);
  }
  const render = m.render as Record<string, unknown>;
  if (typeof render !== "object" || render === null) {
    throw new TypeError("frame_stats.render must be an object");
  }
  const caches = (m.cache ?? {}) as Record<string, Record<string, unknown>>;
  const pending: Record<string, number> = {};
  for (const [name, stats] of Object.entries(caches)) {
    pending[name] = asCount(stats.pending, `cache ${name} pending`);
  }
  return {
    frameId: asCount(m.frame_id, "frame_id"),
    render: {
      backend: String(render.backend ?? ""),
      mode: String(render.mode ?? ""),
      samples: asCount(render.samples ?? 0, "samples"),
      fallbackSamples: asCount(render.fallback_samples, "fallback_samples"),
      wantedMissing: asCount(render.wanted_missing, "wanted_missing"),
      touchedBlocks: asCount(render.touched_blocks ?? 0, "touched_blocks"),
      renderMs: asCount(render.render_ms ?? 0, "render_ms"),
    },
    pending,
  };
}

export class SessionTracker {
  frames = 0;
  lastFrameId = 0;
  lastFrame: Frame | null = null;
  lastStats: FrameStats | null = null;
  fallbackEverSeen = false;
  errors: string[] = [];
  /** Frame-id ordering violations; empty on a healthy stream. */
  violations: string[] = [];

  ingestFrame(frame: Frame): void {
    if (frame.frameId <= this.lastFrameId) {
      this.violations.push(
        `frame id ${frame.frameId} after ${this.lastFrameId}`,
      );
    }
    this.lastFrameId = frame.frameId;
    this.lastFrame = frame;
    this.frames += 1;
  }

  ingestJson(msg: unknown): void {
    const cmd =
      typeof msg === "object" && msg !== null
        ? (msg as Record<string, unknown>).cmd
        : undefined;
    if (cmd === "frame_stats") {
      const stats = parseFrameStats(msg);
      if (stats.render.fallbackSamples > 0) {
        this.fallbackEverSeen = true;
      }
      this.lastStats = stats;
    } else if (cmd === "error") {
      this.errors.push(String((msg as Record<string, unknown>).message));
    }
  }

  /** True once the latest frame used only exact-resolution resident data. */
  get converged(): boolean {
    const s = this.lastStats;
    if (s === null || s.frameId !== this.lastFrameId) {
      return false;
    }
    const pending = Object.values(s.pending).reduce((a, b) => a + b, 0);
    return (
      s.render.fallbackSamples === 0 &&
      s.render.wantedMissing === 0 &&
      pending === 0
    );
  }
}
