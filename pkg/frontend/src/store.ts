// Dashboard state container. Reducers are synchronous and side-effect free;
// the wiring layer (main.ts / tests) feeds them API snapshots and socket
// frames. Server truth always wins: optimistic rows are reconciled by the
// next placement event, and any /v1/events sequence gap flips the stale
// flag until a snapshot resync completes.

import type {
  EventFrame,
  FlRoundsResponse,
  ForecastFrame,
  GraphResponse,
  NowcastFrame,
  StreamInfo,
  StreamsResponse,
} from "./types.js";
import { frameTotal } from "./types.js";
import type { ConnState } from "./ws-client.js";

export interface Notice {
  kind: "error" | "info";
  text: string;
}

export interface DashboardState {
  phase: string;
  streams: StreamInfo[];
  graph: GraphResponse | null;
  liveCounts: Record<string, number>; // camera -> latest per-second total
  lastNowcastTs: number | null;
  forecast: ForecastFrame | null;
  flRounds: FlRoundsResponse;
  lastEventSeq: number | null;
  stale: boolean;
  connections: Record<string, ConnState>;
  pending: Set<string>; // stream ids with an optimistic op in flight
  notices: Notice[];
}

export function initialState(): DashboardState {
  return {
    phase: "idle",
    streams: [],
    graph: null,
    liveCounts: {},
    lastNowcastTs: null,
    forecast: null,
    flRounds: { accuracy_by_round: [], records: [] },
    lastEventSeq: null,
    stale: false,
    connections: { nowcast: "closed", events: "closed", forecast: "closed" },
    pending: new Set(),
    notices: [],
  };
}

export type Listener = (state: DashboardState) => void;

export class DashboardStore {
  state: DashboardState = initialState();
  private listeners: Listener[] = [];

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const l of this.listeners) l(this.state);
  }

  /** Full snapshot load; also the reconnect resync path. */
  applySnapshot(snap: {
    streams: StreamsResponse;
    graph: GraphResponse;
    forecast: ForecastFrame | null;
    flRounds: FlRoundsResponse;
    eventSeq: number;
  }): void {
    this.state.streams = snap.streams.streams;
    this.state.phase = snap.streams.phase;
    this.state.graph = snap.graph;
    this.state.forecast = snap.forecast;
    this.state.flRounds = snap.flRounds;
    this.state.lastEventSeq = snap.eventSeq;
    this.state.pending = new Set();
    this.state.stale = false;
    this.emit();
  }

  applyNowcast(frame: NowcastFrame): void {
    for (const [cam, counts] of Object.entries(frame.per_camera)) {
      this.state.liveCounts[cam] = frameTotal(counts);
    }
    this.state.lastNowcastTs = frame.ts_s;
    this.emit();
  }

  applyForecast(frame: ForecastFrame): void {
    this.state.forecast = frame;
    this.emit();
  }

  /**
   * Placement/health event. Returns true when the caller must resync
   * (a sequence gap was detected: some event was missed).
   */
  applyEvent(frame: EventFrame): boolean {
    let needResync = false;
    if (this.state.lastEventSeq !== null && frame.seq !== this.state.lastEventSeq + 1) {
      this.state.stale = true;
      needResync = true;
    }
    this.state.lastEventSeq = frame.seq;
    if (frame.type === "placement") {
      const placement = frame.data.placement;
      if (placement !== undefined) {
        // authoritative placement snapshot: reconcile the whole table
        this.state.streams = this.state.streams.map((s) => ({
          ...s,
          running: placement[s.id] !== undefined,
          device: placement[s.id] ?? null,
        }));
        for (const id of Object.keys(frame.data.accepted ?? {})) {
          this.state.pending.delete(id);
        }
        for (const id of Object.keys(frame.data.rejected ?? {})) {
          this.state.pending.delete(id);
        }
        for (const id of frame.data.removed ?? []) {
          this.state.pending.delete(id);
        }
      }
      const rejected = frame.data.rejected ?? {};
      for (const [id, reason] of Object.entries(rejected)) {
        this.state.notices.push({ kind: "error", text: `${id}: ${reason}` });
      }
    }
    this.emit();
    return needResync;
  }

  /** Optimistic stream control; the event frame reconciles to server truth. */
  applyOptimistic(ids: string[], action: "start" | "stop"): void {
    const idset = new Set(ids);
    this.state.streams = this.state.streams.map((s) =>
      idset.has(s.id) ? { ...s, running: action === "start", device: s.device } : s
    );
    for (const id of ids) this.state.pending.add(id);
    this.emit();
  }

  setConnection(channel: string, state: ConnState): void {
    this.state.connections[channel] = state;
    if (state !== "open" && (channel === "events" || channel === "nowcast")) {
      this.state.stale = true; // visibly flag disconnects
    }
    this.emit();
  }

  clearNotices(): void {
    this.state.notices = [];
    this.emit();
  }

  /** Placement table rows exactly as the server reports them. */
  placementTable(): Array<{ id: string; device: string; pending: boolean }> {
    return this.state.streams
      .filter((s) => s.running || this.state.pending.has(s.id))
      .map((s) => ({
        id: s.id,
        device: s.device ?? "-",
        pending: this.state.pending.has(s.id),
      }));
  }
}
