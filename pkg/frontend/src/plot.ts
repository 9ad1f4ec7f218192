// Minimal SVG line plotting: pure path-string generation from points.

import type { Point } from "./buffer.js";

export interface PlotScale {
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
}

export function scaleOf(points: Point[]): PlotScale {
  if (points.length === 0) {
    return { tMin: 0, tMax: 1, vMin: 0, vMax: 1 };
  }
  let vMin = Infinity;
  let vMax = -Infinity;
  for (const p of points) {
    vMin = Math.min(vMin, p.value);
    vMax = Math.max(vMax, p.value);
  }
  if (vMax - vMin < 1e-12) {
    vMin -= 0.5;
    vMax += 0.5;
  }
  return { tMin: points[0].t_ns, tMax: points[points.length - 1].t_ns || 1, vMin, vMax };
}

export function pathFor(points: Point[], width: number, height: number, scale?: PlotScale): string {
  if (points.length === 0) {
    return "";
  }
  const s = scale ?? scaleOf(points);
  const spanT = Math.max(1, s.tMax - s.tMin);
  const spanV = s.vMax - s.vMin;
  const parts: string[] = [];
  for (let i = 0; i < points.length; i++) {
    const x = ((points[i].t_ns - s.tMin) / spanT) * width;
    const y = height - ((points[i].value - s.vMin) / spanV) * height;
    parts.push(`${i === 0 ? "M" : "L"}${x.toFixed(1)},${y.toFixed(1)}`);
  }
  return parts.join(" ");
}
