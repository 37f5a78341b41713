import { describe, expect, it } from "vitest";

import { DashboardStore, initialState } from "../src/store.js";
import {
  CongestionState,
  congestionColor,
  edgeKey,
  frameTotal,
  type EventFrame,
  type GraphResponse,
  type StreamsResponse,
} from "../src/types.js";

function snapshot(streams: Array<[string, boolean, string | null]>): {
  streams: StreamsResponse;
  graph: GraphResponse;
  forecast: null;
  flRounds: { accuracy_by_round: number[]; records: [] };
  eventSeq: number;
} {
  return {
    streams: {
      phase: "idle",
      streams: streams.map(([id, running, device]) => ({
        id,
        junction: `J-${id}`,
        fps: 25,
        running,
        device,
      })),
    },
    graph: { vertices: [], super_edges: [], congestion: {}, thresholds: { t1: 1, t2: 2 } },
    forecast: null,
    flRounds: { accuracy_by_round: [], records: [] },
    eventSeq: 0,
  };
}

function placementEvent(seq: number, placement: Record<string, string>,
                        extra: Partial<EventFrame["data"]> = {}): EventFrame {
  return { seq, type: "placement", data: { placement, ...extra } };
}

describe("congestion color mapping", () => {
  it("maps each state 1:1 and rejects unknown states", () => {
    const colors = [
      congestionColor(CongestionState.FreeFlow),
      congestionColor(CongestionState.Moderate),
      congestionColor(CongestionState.Heavy),
    ];
    expect(new Set(colors).size).toBe(3);
    expect(() => congestionColor(3)).toThrow();
  });
});

describe("nowcast frames", () => {
  it("stores per-camera class totals of the frame vector", () => {
    const store = new DashboardStore();
    store.applyNowcast({ ts_s: 42, per_camera: { "cam-0": [1, 2, 0], "cam-1": [0, 0, 5] } });
    expect(store.state.liveCounts["cam-0"]).toBe(3);
    expect(store.state.liveCounts["cam-1"]).toBe(5);
    expect(store.state.lastNowcastTs).toBe(42);
    expect(frameTotal([1, 2, 3])).toBe(6);
  });
});

describe("placement events", () => {
  it("reconciles the table to the server's placement snapshot", () => {
    const store = new DashboardStore();
    store.applySnapshot(snapshot([["cam-0", false, null], ["cam-1", false, null]]));
    store.applyOptimistic(["cam-0", "cam-1"], "start");
    expect(store.placementTable().every((r) => r.pending)).toBe(true);

    const need = store.applyEvent(
      placementEvent(1, { "cam-0": "dev-a" }, {
        accepted: { "cam-0": "dev-a" },
        rejected: { "cam-1": "capacity exhausted" },
      })
    );
    expect(need).toBe(false);
    const rows = store.placementTable();
    expect(rows).toEqual([{ id: "cam-0", device: "dev-a", pending: false }]);
    // rejection surfaced as a notice
    expect(store.state.notices.some((n) => n.text.includes("cam-1"))).toBe(true);
    // server truth: cam-1 not running despite the optimistic start
    expect(store.state.streams.find((s) => s.id === "cam-1")?.running).toBe(false);
  });

  it("flags a sequence gap as stale and requests resync", () => {
    const store = new DashboardStore();
    store.applySnapshot(snapshot([["cam-0", false, null]]));
    expect(store.applyEvent(placementEvent(1, {}))).toBe(false);
    expect(store.state.stale).toBe(false);
    // seq 3 skips 2 -> gap
    expect(store.applyEvent(placementEvent(3, {}))).toBe(true);
    expect(store.state.stale).toBe(true);
  });

  it("clears stale after a snapshot resync", () => {
    const store = new DashboardStore();
    store.applySnapshot(snapshot([["cam-0", false, null]]));
    store.applyEvent(placementEvent(5, {}));
    expect(store.state.stale).toBe(true);
    store.applySnapshot(snapshot([["cam-0", true, "dev-a"]]));
    expect(store.state.stale).toBe(false);
    expect(store.state.pending.size).toBe(0);
  });
});

describe("reconnect convergence", () => {
  it("state after resync equals a fresh load (no phantom streams)", () => {
    const a = new DashboardStore();
    const b = new DashboardStore();
    // store A accumulated optimistic garbage while disconnected
    a.applySnapshot(snapshot([["cam-0", false, null], ["cam-1", false, null]]));
    a.applyOptimistic(["cam-0"], "start");
    a.setConnection("events", "closed");
    expect(a.state.stale).toBe(true);

    const serverTruth = snapshot([["cam-0", false, null], ["cam-1", true, "dev-b"]]);
    a.applySnapshot(serverTruth);
    b.applySnapshot(serverTruth);
    expect(a.state.streams).toEqual(b.state.streams);
    expect(a.placementTable()).toEqual(b.placementTable());
    expect(a.state.stale).toBe(false);
  });
});

describe("connection status", () => {
  it("marks the view stale when a live channel drops", () => {
    const store = new DashboardStore();
    expect(store.state.stale).toBe(false);
    store.setConnection("nowcast", "open");
    expect(store.state.stale).toBe(false);
    store.setConnection("nowcast", "closed");
    expect(store.state.stale).toBe(true);
  });
});

describe("edge keys", () => {
  it("normalizes endpoint order", () => {
    expect(edgeKey("B", "A")).toBe("A~B");
    expect(edgeKey("A", "B")).toBe("A~B");
  });
});

describe("initial state", () => {
  it("starts empty and disconnected", () => {
    const s = initialState();
    expect(s.streams).toEqual([]);
    expect(s.connections["events"]).toBe("closed");
    expect(s.lastEventSeq).toBeNull();
  });
});
