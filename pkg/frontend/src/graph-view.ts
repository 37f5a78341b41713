// SVG nowcast overlay: super-edges colored by server-reported congestion
// state, junction dots sized by the latest per-camera totals, a stale badge
// when the event stream has gaps or a socket is down.

import { layoutGraph, type Layout } from "./layout.js";
import type { DashboardState } from "./store.js";
import { congestionColor, edgeKey, CongestionState } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export class GraphView {
  private layout: Layout = {};
  private layoutKey = "";
  onVertexClick: ((junction: string) => void) | null = null;
  onEdgeClick: ((segment: string) => void) | null = null;

  constructor(private svg: SVGSVGElement, private staleBadge: HTMLElement) {}

  render(state: DashboardState): void {
    const graph = state.graph;
    this.staleBadge.style.display = state.stale ? "inline-block" : "none";
    if (!graph) return;
    const width = this.svg.clientWidth || 640;
    const height = this.svg.clientHeight || 480;
    const key = graph.vertices.map((v) => v.id).join(",") + `|${width}x${height}`;
    if (key !== this.layoutKey) {
      this.layout = layoutGraph(graph.vertices, graph.super_edges, width, height);
      this.layoutKey = key;
    }
    this.svg.replaceChildren();

    for (const e of graph.super_edges) {
      const a = this.layout[e.u];
      const b = this.layout[e.v];
      if (!a || !b) continue;
      const seg = edgeKey(e.u, e.v);
      const cong = graph.congestion[seg];
      const state_ = cong ? cong.state : CongestionState.FreeFlow;
      const line = document.createElementNS(SVG_NS, "line");
      line.setAttribute("x1", String(a.x));
      line.setAttribute("y1", String(a.y));
      line.setAttribute("x2", String(b.x));
      line.setAttribute("y2", String(b.y));
      line.setAttribute("stroke", congestionColor(state_));
      line.setAttribute("stroke-width", String(1.5 + e.weight));
      line.setAttribute("data-segment", seg);
      line.style.cursor = "pointer";
      line.addEventListener("click", () => this.onEdgeClick?.(seg));
      const title = document.createElementNS(SVG_NS, "title");
      title.textContent = cong
        ? `${seg}: ${cong.flow_per_min} veh/min`
        : `${seg}: no data`;
      line.appendChild(title);
      this.svg.appendChild(line);
    }

    for (const v of graph.vertices) {
      const p = this.layout[v.id];
      if (!p) continue;
      const live = this.liveCountForJunction(state, v.id);
      const circle = document.createElementNS(SVG_NS, "circle");
      circle.setAttribute("cx", String(p.x));
      circle.setAttribute("cy", String(p.y));
      circle.setAttribute("r", String(4 + Math.min(10, Math.sqrt(live))));
      circle.setAttribute("fill", "#316dca");
      circle.setAttribute("data-junction", v.id);
      circle.style.cursor = "pointer";
      circle.addEventListener("click", () => this.onVertexClick?.(v.id));
      const title = document.createElementNS(SVG_NS, "title");
      title.textContent = `${v.id}: ${live} vehicles/s`;
      circle.appendChild(title);
      this.svg.appendChild(circle);
    }
  }

  private liveCountForJunction(state: DashboardState, junction: string): number {
    // camera ids map to junctions via the stream table (1 camera = 1 stream)
    let total = 0;
    for (const s of state.streams) {
      if (s.junction === junction) total += state.liveCounts[s.id] ?? 0;
    }
    return total;
  }
}
