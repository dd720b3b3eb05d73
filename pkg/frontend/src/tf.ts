/**
 * Editable transfer function: piecewise-linear control points mapping a
 * normalized scalar in [0, 1] to RGBA in [0, 1].
 *
 * Invariants maintained by every operation (and enforced by the render
 * service, which rejects anything else):
 *   - at least two control points,
 *   - positions strictly increasing, first at 0 and last at 1,
 *   - every color component within [0, 1].
 */

import { Command, setTransferFunction, TfPoint } from "./commands.js";

export type Rgba = readonly [number, number, number, number];

/** Smallest spacing kept between neighbouring control points. */
export const MIN_GAP = 1e-6;

function clamp01(v: number): number {
  if (!Number.isFinite(v)) return 0;
  return Math.min(1, Math.max(0, v));
}

function clampRgba(rgba: Rgba): [number, number, number, number] {
  return [clamp01(rgba[0]), clamp01(rgba[1]), clamp01(rgba[2]), clamp01(rgba[3])];
}

export class TransferFunctionModel {
  private pts: { x: number; rgba: [number, number, number, number] }[];

  constructor(points?: readonly TfPoint[]) {
    if (points === undefined) {
      this.pts = [
        { x: 0, rgba: [0, 0, 0, 0] },
        { x: 1, rgba: [1, 1, 1, 1] },
      ];
      return;
    }
    if (points.length < 2) {
      throw new RangeError("a transfer function needs at least 2 points");
    }
    if (points[0].x !== 0 || points[points.length - 1].x !== 1) {
      throw new RangeError("control points must start at x=0 and end at x=1");
    }
    for (let k = 1; k < points.length; k++) {
      if (!(points[k].x > points[k - 1].x)) {
        throw new RangeError("control point positions must strictly increase");
      }
    }
    this.pts = points.map((p) => ({ x: clamp01(p.x), rgba: clampRgba(p.rgba) }));
  }

  get points(): TfPoint[] {
    return this.pts.map((p) => ({ x: p.x, rgba: [...p.rgba] as Rgba }));
  }

  get size(): number {
    return this.pts.length;
  }

  /**
   * Insert a control point near x; returns its index.  The position is
   * pulled strictly inside the gap between its neighbours; throws
   * `RangeError` when that gap is too small to split.
   */
  addPoint(x: number, rgba: Rgba): number {
    const cx = clamp01(x);
    let at = this.pts.length - 1;
    for (let k = 1; k < this.pts.length; k++) {
      if (this.pts[k].x >= cx) {
        at = k;
        break;
      }
    }
    const lo = this.pts[at - 1].x;
    const hi = this.pts[at].x;
    if (hi - lo < 3 * MIN_GAP) {
      throw new RangeError("no room for another control point here");
    }
    const placed = Math.min(hi - MIN_GAP, Math.max(lo + MIN_GAP, cx));
    this.pts.splice(at, 0, { x: placed, rgba: clampRgba(rgba) });
    return at;
  }

  /** Move a point; endpoint x stays pinned, interior x stays between its neighbours. */
  movePoint(index: number, x: number, rgba?: Rgba): void {
    if (index < 0 || index >= this.pts.length) {
      throw new RangeError(`no control point at index ${index}`);
    }
    const p = this.pts[index];
    if (index > 0 && index < this.pts.length - 1) {
      const lo = this.pts[index - 1].x + MIN_GAP;
      const hi = this.pts[index + 1].x - MIN_GAP;
      p.x = Math.min(hi, Math.max(lo, clamp01(x)));
    }
    if (rgba !== undefined) {
      p.rgba = clampRgba(rgba);
    }
  }

  /** Remove an interior point; the two endpoints cannot be removed. */
  removePoint(index: number): void {
    if (index <= 0 || index >= this.pts.length - 1) {
      throw new RangeError("only interior control points can be removed");
    }
    this.pts.splice(index, 1);
  }

  /** Evaluate the piecewise-linear map at a scalar in [0, 1]. */
  sample(scalar: number): [number, number, number, number] {
    const s = clamp01(scalar);
    let k = 0;
    while (k < this.pts.length - 2 && this.pts[k + 1].x <= s) {
      k++;
    }
    const a = this.pts[k];
    const b = this.pts[k + 1];
    const u = (s - a.x) / (b.x - a.x);
    return [
      a.rgba[0] + (b.rgba[0] - a.rgba[0]) * u,
      a.rgba[1] + (b.rgba[1] - a.rgba[1]) * u,
      a.rgba[2] + (b.rgba[2] - a.rgba[2]) * u,
      a.rgba[3] + (b.rgba[3] - a.rgba[3]) * u,
    ];
  }

  command(): Command {
    return setTransferFunction(this.points);
  }
}
