// Dashboard bootstrap: wires the API client, the three socket feeds, the
// store, and the views. The gateway base URL comes from ?api=  (default
// localhost:8000).

import { ApiClient } from "./api.js";
import { SeriesChart } from "./charts.js";
import { GraphView } from "./graph-view.js";
import { DashboardStore } from "./store.js";
import { renderFlTable, renderNotices, renderPlacementTable, renderStreamPicker } from "./tables.js";
import type { EventFrame, ForecastFrame, NowcastFrame } from "./types.js";
import { ReconnectingSocket } from "./ws-client.js";

const params = new URLSearchParams(location.search);
const apiBase = params.get("api") ?? "http://127.0.0.1:8000";
const wsBase = apiBase.replace(/^http/, "ws");

const api = new ApiClient(apiBase);
const store = new DashboardStore();
const selected = new Set<string>();

const $ = (id: string) => document.getElementById(id) as HTMLElement;

const graphView = new GraphView(
  $("graph") as unknown as SVGSVGElement,
  $("stale-badge")
);
const chart = new SeriesChart($("chart") as HTMLCanvasElement);
let chartTarget: string | null = null;
let chartJunction: string | null = null;

async function resync(): Promise<void> {
  const [streams, graph, forecast, flRounds, health] = await Promise.all([
    api.streams(),
    api.graph(),
    api.forecast(),
    api.flRounds(),
    api.health(),
  ]);
  store.applySnapshot({ streams, graph, forecast, flRounds, eventSeq: health.seq });
}

async function refreshEdges(): Promise<void> {
  // edge congestion is server-computed; refresh the overlay's graph snapshot
  const graph = await api.graph();
  store.state.graph = graph;
  graphView.render(store.state);
}

async function refreshChart(): Promise<void> {
  if (!chartTarget) {
    chart.render(null, store.state.forecast, null);
    return;
  }
  const history = await api.history(chartTarget, 900);
  chart.render(history, store.state.forecast, chartJunction);
}

graphView.onVertexClick = (junction) => {
  const cam = store.state.streams.find((s) => s.junction === junction);
  chartTarget = cam ? cam.id : null;
  chartJunction = junction;
  void refreshChart();
};
graphView.onEdgeClick = (segment) => {
  chartTarget = segment;
  chartJunction = null;
  void refreshChart();
};

// -- socket feeds -------------------------------------------------------------

const nowcastSocket = new ReconnectingSocket(`${wsBase}/v1/nowcast`, {
  onFrame: (f) => store.applyNowcast(f as unknown as NowcastFrame),
  onStatus: (s) => store.setConnection("nowcast", s),
});
const eventsSocket = new ReconnectingSocket(`${wsBase}/v1/events`, {
  onFrame: (f) => {
    const needResync = store.applyEvent(f as unknown as EventFrame);
    if (needResync) void resync();
  },
  onStatus: (s) => {
    const wasOpen = store.state.connections["events"] === "open";
    store.setConnection("events", s);
    if (s === "open" && !wasOpen) void resync(); // converge to server truth
  },
});
const forecastSocket = new ReconnectingSocket(`${wsBase}/v1/forecast/stream`, {
  onFrame: (f) => store.applyForecast(f as unknown as ForecastFrame),
  onStatus: (s) => store.setConnection("forecast", s),
});

// -- controls --------------------------------------------------------------------

function policy(): string {
  return ($("policy") as HTMLSelectElement).value;
}

$("btn-start").addEventListener("click", () => {
  const ids = [...selected];
  if (ids.length === 0) return;
  store.applyOptimistic(ids, "start");
  api.startStreams(ids, policy()).catch((e) => {
    store.state.notices.push({ kind: "error", text: String(e) });
    void resync(); // optimistic rows roll back to server truth
  });
});
$("btn-stop").addEventListener("click", () => {
  const ids = [...selected].filter((id) =>
    store.state.streams.some((s) => s.id === id && s.running)
  );
  if (ids.length === 0) return;
  store.applyOptimistic(ids, "stop");
  api.stopStreams(ids).catch((e) => {
    store.state.notices.push({ kind: "error", text: String(e) });
    void resync();
  });
});
$("btn-all").addEventListener("click", () => {
  for (const s of store.state.streams) selected.add(s.id);
  renderStreamPicker($("picker"), store, selected);
});
$("btn-none").addEventListener("click", () => {
  selected.clear();
  renderStreamPicker($("picker"), store, selected);
});
$("picker").addEventListener("change", (ev) => {
  const box = ev.target as HTMLInputElement;
  const id = box.dataset["stream"];
  if (!id) return;
  if (box.checked) selected.add(id);
  else selected.delete(id);
});

// -- render loop --------------------------------------------------------------------

let edgeRefreshAt = 0;
store.subscribe((state) => {
  graphView.render(state);
  renderPlacementTable($("placement"), store);
  renderStreamPicker($("picker"), store, selected);
  renderFlTable($("fl"), store);
  renderNotices($("notices"), store);
  $("conn").textContent = Object.entries(state.connections)
    .map(([k, v]) => `${k}:${v}`)
    .join("  ");
  const now = Date.now();
  if (state.lastNowcastTs !== null && now - edgeRefreshAt > 1000) {
    edgeRefreshAt = now;
    void refreshEdges();
  }
});

void (async () => {
  await resync();
  nowcastSocket.start();
  eventsSocket.start();
  forecastSocket.start();
  void refreshChart();
})();
