// Orbit camera over the point cloud: yaw/pitch around a target, dolly zoom,
// screen-space panning, and the perspective projection the picker relies on.

import { Vec3, add, cross, dot, normalize, scale, sub } from "./math3d.js";

export interface ProjectedPoint {
  id: number;
  sx: number;
  sy: number;
  depth: number;
}

const PITCH_LIMIT = 1.45;
const WORLD_UP: Vec3 = [0, 0, 1];

export class OrbitCamera {
  yaw = -2.5;
  pitch = 0.3;
  distance = 1.4;
  target: Vec3 = [0.5, 0, 0.45];
  fovY = Math.PI / 3;

  position(): Vec3 {
    const cp = Math.cos(this.pitch);
    const dir: Vec3 = [cp * Math.cos(this.yaw), cp * Math.sin(this.yaw), Math.sin(this.pitch)];
    return add(this.target, scale(dir, this.distance));
  }

  private basis(): { right: Vec3; up: Vec3; forward: Vec3 } {
    const forward = normalize(sub(this.target, this.position()));
    let right = cross(forward, WORLD_UP);
    if (Math.hypot(right[0], right[1], right[2]) < 1e-9) {
      right = cross(forward, [1, 0, 0]);
    }
    right = normalize(right);
    const up = cross(right, forward);
    return { right, up, forward };
  }

  /** Perspective projection to pixel coordinates; null when behind the camera. */
  project(p: Vec3, width: number, height: number): { sx: number; sy: number; depth: number } | null {
    const { right, up, forward } = this.basis();
    const rel = sub(p, this.position());
    const depth = dot(rel, forward);
    if (depth <= 1e-9) return null;
    const f = (0.5 * height) / Math.tan(this.fovY / 2);
    return {
      sx: width / 2 + (f * dot(rel, right)) / depth,
      sy: height / 2 - (f * dot(rel, up)) / depth,
      depth,
    };
  }

  orbit(dYaw: number, dPitch: number): void {
    this.yaw += dYaw;
    this.pitch = Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, this.pitch + dPitch));
  }

  zoom(factor: number): void {
    this.distance = Math.min(20, Math.max(0.05, this.distance * factor));
  }

  pan(dxPx: number, dyPx: number, height: number): void {
    const { right, up } = this.basis();
    const f = (0.5 * height) / Math.tan(this.fovY / 2);
    const perPixel = this.distance / f;
    this.target = add(
      this.target,
      add(scale(right, -dxPx * perPixel), scale(up, dyPx * perPixel)),
    );
  }

  /** Frame a cloud: aim at its centroid and back off to cover its radius. */
  fit(points: Vec3[]): void {
    if (!points.length) return;
    const c: Vec3 = [0, 0, 0];
    for (const p of points) {
      c[0] += p[0];
      c[1] += p[1];
      c[2] += p[2];
    }
    this.target = scale(c, 1 / points.length);
    let radius = 0;
    for (const p of points) {
      const d = sub(p, this.target);
      radius = Math.max(radius, Math.hypot(d[0], d[1], d[2]));
    }
    this.distance = Math.max(0.3, 2.5 * radius);
  }
}
