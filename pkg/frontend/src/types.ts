// Payload types for the gateway's /v1 HTTP + WebSocket surface.
// The dashboard never computes analytics client-side: every displayed number
// is an API field (or the class-total of a single frame's count vector).

export interface StreamInfo {
  id: string;
  junction: string;
  fps: number;
  running: boolean;
  device: string | null;
}

export interface StreamsResponse {
  streams: StreamInfo[];
  phase: string;
}

export interface StartResult {
  accepted: Record<string, string>;
  rejected: Record<string, string>;
}

export interface GraphVertex {
  id: string;
  x?: number;
  y?: number;
}

export interface GraphSuperEdge {
  u: string;
  v: string;
  weight: number;
  hop_length: number;
}

export interface EdgeCongestion {
  flow_per_min: number;
  state: number;
}

export interface GraphResponse {
  vertices: GraphVertex[];
  super_edges: GraphSuperEdge[];
  congestion: Record<string, EdgeCongestion>;
  thresholds: { t1: number; t2: number };
}

export interface NowcastFrame {
  ts_s: number;
  per_camera: Record<string, number[]>;
}

export interface PlacementEventData {
  accepted?: Record<string, string>;
  rejected?: Record<string, string>;
  removed?: string[];
  placement?: Record<string, string>;
}

export interface EventFrame {
  seq: number;
  type: string;
  data: PlacementEventData;
}

export interface ForecastFrame {
  issued_at_s: number;
  junctions: string[];
  step_minutes: number;
  model_id: string;
  values: number[][]; // [horizon_step][junction]
}

export interface HistoryResponse {
  target: string;
  minutes: number[];
  series: number[];
  congestion: number[];
}

export interface SchedulerMetrics {
  n_streams: number;
  cumulative_fps: number;
  active_capacity_tops: number;
  utilization_pct: number;
  total_power_w: number;
  n_active_devices: number;
}

export interface FlClientRecord {
  round: number;
  client_id: string;
  tier: string;
  n_streams: number;
  n_frames: number;
  n_samples: number;
  class_histogram: number[];
  label_latency_s: number;
  train_time_s: number;
}

export interface FlRoundsResponse {
  accuracy_by_round: number[];
  records: Array<FlClientRecord | { round: number; aggregate: true; global_accuracy: number }>;
}

export enum CongestionState {
  FreeFlow = 0,
  Moderate = 1,
  Heavy = 2,
}

// 1:1 color mapping for congestion states; nothing else may color edges.
export const CONGESTION_COLORS: Record<CongestionState, string> = {
  [CongestionState.FreeFlow]: "#2da44e",
  [CongestionState.Moderate]: "#d4a72c",
  [CongestionState.Heavy]: "#cf222e",
};

export function congestionColor(state: number): string {
  const c = CONGESTION_COLORS[state as CongestionState];
  if (c === undefined) {
    throw new Error(`unknown congestion state ${state}`);
  }
  return c;
}

export function edgeKey(u: string, v: string): string {
  return u <= v ? `${u}~${v}` : `${v}~${u}`;
}

/** Class-total of one nowcast count vector (presentation only). */
export function frameTotal(counts: number[]): number {
  return counts.reduce((a, b) => a + b, 0);
}
