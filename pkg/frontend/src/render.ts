// Canvas 2D point-cloud renderer: projects the VO points through the orbit
// camera, far-to-near, and returns the projections for click picking.

import { OrbitCamera, ProjectedPoint } from "./camera.js";
import { UiState } from "./state.js";
import { Vec3 } from "./math3d.js";

export function drawPointCloud(
  ctx: CanvasRenderingContext2D,
  state: UiState,
  camera: OrbitCamera,
  width: number,
  height: number,
): ProjectedPoint[] {
  ctx.fillStyle = "#0b0e14";
  ctx.fillRect(0, 0, width, height);

  const projected: ProjectedPoint[] = [];
  for (const [key, p] of Object.entries(state.points)) {
    const s = camera.project([p.x, p.y, p.z] as Vec3, width, height);
    if (s) projected.push({ id: Number(key), ...s });
  }
  projected.sort((a, b) => b.depth - a.depth);

  for (const p of projected) {
    const r = Math.min(6, Math.max(1.5, 3.5 / p.depth));
    const selected = p.id === state.selectedPointId;
    ctx.fillStyle = selected ? "#ffcc33" : "#7fd1b9";
    ctx.fillRect(p.sx - r, p.sy - r, 2 * r, 2 * r);
    if (selected) {
      ctx.strokeStyle = "#ffcc33";
      ctx.beginPath();
      ctx.arc(p.sx, p.sy, r + 5, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  ctx.fillStyle = "#9aa4b2";
  ctx.font = "12px system-ui, sans-serif";
  if (!projected.length && state.pointCount === 0) {
    ctx.textAlign = "center";
    ctx.fillText("exploring… waiting for map points", width / 2, height / 2);
    ctx.textAlign = "left";
  }
  ctx.fillText(`${state.pointCount} points`, 8, height - 8);
  return projected;
}
