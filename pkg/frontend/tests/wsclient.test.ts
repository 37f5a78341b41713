import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ReconnectingSocket, type SocketLike } from "../src/ws-client.js";

class FakeSocket implements SocketLike {
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  closed = false;

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  serverSend(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }

  serverOpen(): void {
    this.onopen?.();
  }
}

describe("ReconnectingSocket", () => {
  let sockets: FakeSocket[];
  const factory = () => {
    const s = new FakeSocket();
    sockets.push(s);
    return s;
  };

  beforeEach(() => {
    sockets = [];
    vi.useFakeTimers();
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  it("delivers frames and filters heartbeats", () => {
    const frames: unknown[] = [];
    const rs = new ReconnectingSocket("ws://x", { factory, onFrame: (f) => frames.push(f) });
    rs.start();
    sockets[0].serverOpen();
    sockets[0].serverSend({ type: "heartbeat" });
    sockets[0].serverSend({ ts_s: 1, per_camera: {} });
    expect(frames).toEqual([{ ts_s: 1, per_camera: {} }]);
    rs.stop();
  });

  it("ignores malformed frames", () => {
    const frames: unknown[] = [];
    const rs = new ReconnectingSocket("ws://x", { factory, onFrame: (f) => frames.push(f) });
    rs.start();
    sockets[0].serverOpen();
    sockets[0].onmessage?.({ data: "{not json" });
    expect(frames).toEqual([]);
    rs.stop();
  });

  it("reconnects with exponential backoff after drops", () => {
    const states: string[] = [];
    const rs = new ReconnectingSocket("ws://x", {
      factory,
      baseDelayMs: 100,
      maxDelayMs: 1000,
      onFrame: () => {},
      onStatus: (s) => states.push(s),
    });
    rs.start();
    expect(sockets.length).toBe(1);
    sockets[0].close(); // first drop -> retry after 100ms (attempt 0)
    expect(sockets.length).toBe(1);
    vi.advanceTimersByTime(99);
    expect(sockets.length).toBe(1);
    vi.advanceTimersByTime(1);
    expect(sockets.length).toBe(2);
    sockets[1].close(); // second drop -> 200ms
    vi.advanceTimersByTime(199);
    expect(sockets.length).toBe(2);
    vi.advanceTimersByTime(1);
    expect(sockets.length).toBe(3);
    // successful open resets the backoff
    sockets[2].serverOpen();
    sockets[2].close();
    vi.advanceTimersByTime(100);
    expect(sockets.length).toBe(4);
    expect(states).toContain("open");
    expect(states).toContain("closed");
    rs.stop();
  });

  it("backoff is capped at maxDelayMs", () => {
    const rs = new ReconnectingSocket("ws://x", {
      factory,
      baseDelayMs: 100,
      maxDelayMs: 300,
      onFrame: () => {},
    });
    rs.start();
    for (let i = 0; i < 6; i++) {
      sockets[sockets.length - 1].close();
      vi.advanceTimersByTime(300);
    }
    expect(rs.nextDelayMs()).toBe(300);
    rs.stop();
  });

  it("stop() prevents any further reconnects", () => {
    const rs = new ReconnectingSocket("ws://x", { factory, baseDelayMs: 50, onFrame: () => {} });
    rs.start();
    sockets[0].close();
    rs.stop();
    vi.advanceTimersByTime(10_000);
    expect(sockets.length).toBe(1);
  });

  it("forceDrop closes the transport but keeps reconnecting", () => {
    const rs = new ReconnectingSocket("ws://x", { factory, baseDelayMs: 50, onFrame: () => {} });
    rs.start();
    sockets[0].serverOpen();
    rs.forceDrop();
    vi.advanceTimersByTime(50);
    expect(sockets.length).toBe(2);
    rs.stop();
  });
});
