// Screen-space picking: nearest projected point within a click radius, and
// annotation snapping for the fine-task image view.  Pure functions.

import { Annotation } from "./schema.js";
import { ProjectedPoint } from "./camera.js";

export const PICK_RADIUS_PX = 12;
export const SNAP_RADIUS_PX = 8;

function closer(a: ProjectedPoint, b: ProjectedPoint): boolean {
  if (a.depth !== b.depth) return a.depth < b.depth;
  return a.id < b.id;
}

/** Nearest candidate within the radius (inclusive); ties go to the nearer
 * in depth, then the smaller id, so picking is deterministic. */
export function pickNearest(
  candidates: ProjectedPoint[],
  x: number,
  y: number,
  radius: number = PICK_RADIUS_PX,
): number | null {
  let best: ProjectedPoint | null = null;
  let bestDist = Infinity;
  for (const c of candidates) {
    const d = Math.hypot(c.sx - x, c.sy - y);
    if (d > radius) continue;
    if (best === null || d < bestDist || (d === bestDist && closer(c, best))) {
      best = c;
      bestDist = d;
    }
  }
  return best ? best.id : null;
}

/** Snap a click (in image pixel coordinates) to the nearest annotation. */
export function snapToAnnotation(
  annotations: Annotation[],
  u: number,
  v: number,
  radius: number = SNAP_RADIUS_PX,
): Annotation | null {
  let best: Annotation | null = null;
  let bestDist = Infinity;
  for (const a of annotations) {
    const d = Math.hypot(a.u - u, a.v - v);
    if (d > radius) continue;
    if (best === null || d < bestDist || (d === bestDist && a.id < best.id)) {
      best = a;
      bestDist = d;
    }
  }
  return best;
}
