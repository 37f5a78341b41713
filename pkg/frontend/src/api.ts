// Thin typed client for the gateway REST surface.

import type {
  FlRoundsResponse,
  ForecastFrame,
  GraphResponse,
  HistoryResponse,
  SchedulerMetrics,
  StartResult,
  StreamsResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      const body = await res.text();
      throw new ApiError(res.status, `${init?.method ?? "GET"} ${path}: ${body}`);
    }
    return (await res.json()) as T;
  }

  streams(): Promise<StreamsResponse> {
    return this.request("/v1/streams");
  }

  startStreams(ids: string[], policy?: string): Promise<StartResult> {
    return this.request("/v1/streams", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ids, policy: policy ?? null, live: true }),
    });
  }

  stopStreams(ids: string[]): Promise<{ removed: string[] }> {
    return this.request(`/v1/streams?ids=${encodeURIComponent(ids.join(","))}`, {
      method: "DELETE",
    });
  }

  graph(): Promise<GraphResponse> {
    return this.request("/v1/graph");
  }

  metrics(): Promise<SchedulerMetrics> {
    return this.request("/v1/scheduler/metrics");
  }

  history(target: string, windowS = 900): Promise<HistoryResponse> {
    return this.request(
      `/v1/history?target=${encodeURIComponent(target)}&window=${windowS}`
    );
  }

  forecast(): Promise<ForecastFrame | null> {
    return this.request<ForecastFrame>("/v1/forecast").catch((e: unknown) => {
      if (e instanceof ApiError && e.status === 404) return null; // none issued yet
      throw e;
    });
  }

  flRounds(): Promise<FlRoundsResponse> {
    return this.request("/v1/fl/rounds");
  }

  health(): Promise<{ phase: string; modules: Record<string, string>; seq: number }> {
    return this.request("/v1/health");
  }
}
