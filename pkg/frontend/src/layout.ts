// Graph layout: preset positions from per-junction layout hints when every
// vertex carries them, else a deterministic force-directed embedding (no
// map tiles, no geodata). Deterministic: initial positions come from a
// string hash, not Math.random, so two renders of the same graph agree.

import type { GraphSuperEdge, GraphVertex } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export type Layout = Record<string, Point>;

function hash01(s: string, salt: number): number {
  let h = 2166136261 ^ salt;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 16777619);
  }
  return ((h >>> 0) % 100000) / 100000;
}

export function presetLayout(
  vertices: GraphVertex[],
  width: number,
  height: number,
  margin = 24
): Layout | null {
  if (vertices.length === 0 || !vertices.every((v) => v.x !== undefined && v.y !== undefined)) {
    return null;
  }
  const xs = vertices.map((v) => v.x as number);
  const ys = vertices.map((v) => v.y as number);
  const [minX, maxX] = [Math.min(...xs), Math.max(...xs)];
  const [minY, maxY] = [Math.min(...ys), Math.max(...ys)];
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const out: Layout = {};
  for (const v of vertices) {
    out[v.id] = {
      x: margin + (((v.x as number) - minX) / spanX) * (width - 2 * margin),
      y: margin + (((v.y as number) - minY) / spanY) * (height - 2 * margin),
    };
  }
  return out;
}

export function forceLayout(
  vertices: GraphVertex[],
  edges: GraphSuperEdge[],
  width: number,
  height: number,
  iterations = 150
): Layout {
  const n = vertices.length;
  const pos: Layout = {};
  for (const v of vertices) {
    pos[v.id] = {
      x: width * (0.1 + 0.8 * hash01(v.id, 1)),
      y: height * (0.1 + 0.8 * hash01(v.id, 2)),
    };
  }
  if (n <= 1) return pos;
  const area = width * height;
  const k = Math.sqrt(area / n); // ideal spring length
  let temp = width / 8;
  for (let it = 0; it < iterations; it++) {
    const disp: Record<string, Point> = {};
    for (const v of vertices) disp[v.id] = { x: 0, y: 0 };
    // repulsion
    for (let i = 0; i < n; i++) {
      for (let j = i + 1; j < n; j++) {
        const a = vertices[i].id;
        const b = vertices[j].id;
        let dx = pos[a].x - pos[b].x;
        let dy = pos[a].y - pos[b].y;
        let d = Math.hypot(dx, dy);
        if (d < 1e-6) {
          dx = hash01(a + b, it) - 0.5;
          dy = 0.5 - hash01(b + a, it);
          d = Math.hypot(dx, dy);
        }
        const f = (k * k) / d;
        disp[a].x += (dx / d) * f;
        disp[a].y += (dy / d) * f;
        disp[b].x -= (dx / d) * f;
        disp[b].y -= (dy / d) * f;
      }
    }
    // springs along super-edges, stiffer for heavier edges
    for (const e of edges) {
      const dx = pos[e.u].x - pos[e.v].x;
      const dy = pos[e.u].y - pos[e.v].y;
      const d = Math.hypot(dx, dy) || 1e-6;
      const f = (d * d) / k * Math.min(e.weight, 3);
      disp[e.u].x -= (dx / d) * f;
      disp[e.u].y -= (dy / d) * f;
      disp[e.v].x += (dx / d) * f;
      disp[e.v].y += (dy / d) * f;
    }
    for (const v of vertices) {
      const d = Math.hypot(disp[v.id].x, disp[v.id].y);
      if (d > 1e-9) {
        const step = Math.min(d, temp);
        pos[v.id].x += (disp[v.id].x / d) * step;
        pos[v.id].y += (disp[v.id].y / d) * step;
      }
      pos[v.id].x = Math.min(width - 12, Math.max(12, pos[v.id].x));
      pos[v.id].y = Math.min(height - 12, Math.max(12, pos[v.id].y));
    }
    temp *= 0.96;
  }
  return pos;
}

export function layoutGraph(
  vertices: GraphVertex[],
  edges: GraphSuperEdge[],
  width: number,
  height: number
): Layout {
  return presetLayout(vertices, width, height) ?? forceLayout(vertices, edges, width, height);
}
