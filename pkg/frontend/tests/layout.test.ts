import { describe, expect, it } from "vitest";

import { forceLayout, layoutGraph, presetLayout } from "../src/layout.js";
import type { GraphSuperEdge, GraphVertex } from "../src/types.js";

const W = 640;
const H = 480;

function ring(n: number, withHints: boolean): { vs: GraphVertex[]; es: GraphSuperEdge[] } {
  const vs: GraphVertex[] = [];
  const es: GraphSuperEdge[] = [];
  for (let i = 0; i < n; i++) {
    const v: GraphVertex = { id: `J${i}` };
    if (withHints) {
      v.x = Math.cos((2 * Math.PI * i) / n);
      v.y = Math.sin((2 * Math.PI * i) / n);
    }
    vs.push(v);
    es.push({ u: `J${i}`, v: `J${(i + 1) % n}`, weight: 1, hop_length: 1 });
  }
  return { vs, es };
}

describe("presetLayout", () => {
  it("scales layout hints into the viewport", () => {
    const { vs } = ring(8, true);
    const layout = presetLayout(vs, W, H)!;
    expect(layout).not.toBeNull();
    for (const p of Object.values(layout)) {
      expect(p.x).toBeGreaterThanOrEqual(0);
      expect(p.x).toBeLessThanOrEqual(W);
      expect(p.y).toBeGreaterThanOrEqual(0);
      expect(p.y).toBeLessThanOrEqual(H);
    }
    // extremes hit the margins
    const xs = Object.values(layout).map((p) => p.x);
    expect(Math.min(...xs)).toBeCloseTo(24, 3);
    expect(Math.max(...xs)).toBeCloseTo(W - 24, 3);
  });

  it("returns null when any vertex lacks hints", () => {
    const { vs } = ring(4, true);
    delete vs[2].x;
    expect(presetLayout(vs, W, H)).toBeNull();
  });
});

describe("forceLayout", () => {
  it("is deterministic for identical input", () => {
    const { vs, es } = ring(10, false);
    const a = forceLayout(vs, es, W, H);
    const b = forceLayout(vs, es, W, H);
    expect(a).toEqual(b);
  });

  it("keeps every vertex inside the viewport and apart", () => {
    const { vs, es } = ring(12, false);
    const layout = forceLayout(vs, es, W, H);
    const points = Object.values(layout);
    for (const p of points) {
      expect(p.x).toBeGreaterThanOrEqual(12);
      expect(p.x).toBeLessThanOrEqual(W - 12);
      expect(p.y).toBeGreaterThanOrEqual(12);
      expect(p.y).toBeLessThanOrEqual(H - 12);
    }
    for (let i = 0; i < points.length; i++) {
      for (let j = i + 1; j < points.length; j++) {
        const d = Math.hypot(points[i].x - points[j].x, points[i].y - points[j].y);
        expect(d).toBeGreaterThan(5);
      }
    }
  });
});

describe("layoutGraph", () => {
  it("prefers preset hints, falls back to force layout", () => {
    const hinted = ring(6, true);
    const bare = ring(6, false);
    expect(layoutGraph(hinted.vs, hinted.es, W, H)).toEqual(presetLayout(hinted.vs, W, H));
    const forced = layoutGraph(bare.vs, bare.es, W, H);
    expect(Object.keys(forced)).toHaveLength(6);
  });
});
