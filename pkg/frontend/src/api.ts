/** HTTP + WebSocket client for the control API. All state originates here. */

import type { DeviceStatus } from "./state.js";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export interface ActionResult {
  device_id?: string;
  action?: string;
  ok: boolean;
  note?: string;
  error?: string;
}

export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: FetchFn = (u, i) => fetch(u, i),
  ) {}

  async getDevices(): Promise<DeviceStatus[]> {
    const resp = await this.fetchFn(`${this.base}/devices`);
    if (!resp.ok) throw new Error(`GET /devices failed: ${resp.status}`);
    return (await resp.json()) as DeviceStatus[];
  }

  async action(deviceId: string, action: string): Promise<ActionResult> {
    const resp = await this.fetchFn(`${this.base}/devices/${deviceId}/${action}`, {
      method: "POST",
    });
    const body = (await resp.json()) as ActionResult;
    return { ...body, ok: resp.ok && body.ok !== false };
  }

  async annotate(label: string): Promise<{ label: string; t_ns: number }> {
    const resp = await this.fetchFn(`${this.base}/session/annotate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ label }),
    });
    if (!resp.ok) throw new Error(`annotate failed: ${resp.status}`);
    return (await resp.json()) as { label: string; t_ns: number };
  }

  async collective(fromNs = 0, toNs?: number): Promise<Record<string, [number, number][]>> {
    const to = toNs !== undefined ? `&to_ns=${toNs}` : "";
    const resp = await this.fetchFn(`${this.base}/metrics/collective?from_ns=${fromNs}${to}`);
    if (!resp.ok) throw new Error(`collective metrics failed: ${resp.status}`);
    return (await resp.json()) as Record<string, [number, number][]>;
  }
}

// minimal surface of the browser WebSocket we rely on, so tests can fake it
export interface SocketLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  onopen: (() => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StreamSubscription {
  close(): void;
}

/** Subscribe to a WS stream with automatic reconnect.
 *
 * onStatus drives the reconnect banner; messages are delivered in arrival
 * order and never synthesized client-side.
 */
export function connectStream(
  url: string,
  onMessage: (msg: unknown) => void,
  onStatus: (status: "connected" | "reconnecting") => void,
  socketFactory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
  reconnectDelayMs = 1000,
): StreamSubscription {
  let closed = false;
  let socket: SocketLike | null = null;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const open = () => {
    if (closed) return;
    socket = socketFactory(url);
    socket.onopen = () => onStatus("connected");
    socket.onmessage = (ev) => onMessage(JSON.parse(ev.data));
    const retry = () => {
      if (closed) return;
      onStatus("reconnecting");
      timer = setTimeout(open, reconnectDelayMs);
    };
    socket.onclose = retry;
    socket.onerror = () => socket?.close();
  };
  open();
  return {
    close() {
      closed = true;
      if (timer !== null) clearTimeout(timer);
      socket?.close();
    },
  };
}
