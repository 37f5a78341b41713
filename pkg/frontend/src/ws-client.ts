// Reconnecting WebSocket with exponential backoff and heartbeat filtering.
// The socket constructor is injectable so tests (and Node) can supply `ws`.

export type ConnState = "connecting" | "open" | "closed";

export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ReconnectingSocketOptions {
  factory?: SocketFactory;
  baseDelayMs?: number;
  maxDelayMs?: number;
  onFrame: (frame: Record<string, unknown>) => void;
  onStatus?: (state: ConnState) => void;
}

const defaultFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export class ReconnectingSocket {
  private socket: SocketLike | null = null;
  private attempts = 0;
  private stopped = true;
  private timer: ReturnType<typeof setTimeout> | null = null;
  readonly baseDelayMs: number;
  readonly maxDelayMs: number;

  constructor(private url: string, private opts: ReconnectingSocketOptions) {
    this.baseDelayMs = opts.baseDelayMs ?? 250;
    this.maxDelayMs = opts.maxDelayMs ?? 5000;
  }

  start(): void {
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.socket?.close();
    this.socket = null;
  }

  /** Test hook: drop the transport as if the network failed. */
  forceDrop(): void {
    this.socket?.close();
  }

  nextDelayMs(): number {
    return Math.min(this.baseDelayMs * 2 ** this.attempts, this.maxDelayMs);
  }

  private connect(): void {
    if (this.stopped) return;
    this.opts.onStatus?.("connecting");
    const factory = this.opts.factory ?? defaultFactory;
    let sock: SocketLike;
    try {
      sock = factory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = sock;
    sock.onopen = () => {
      this.attempts = 0;
      this.opts.onStatus?.("open");
    };
    sock.onmessage = (ev) => {
      let frame: Record<string, unknown>;
      try {
        frame = JSON.parse(String(ev.data));
      } catch {
        return; // ignore malformed frames
      }
      if (frame["type"] === "heartbeat") return; // keepalive only
      this.opts.onFrame(frame);
    };
    sock.onerror = () => {
      // close follows; reconnect is handled there
    };
    sock.onclose = () => {
      if (this.socket === sock) this.socket = null;
      this.opts.onStatus?.("closed");
      this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    if (this.stopped || this.timer !== null) return;
    const delay = this.nextDelayMs();
    this.attempts += 1;
    this.timer = setTimeout(() => {
      this.timer = null;
      this.connect();
    }, delay);
  }
}
