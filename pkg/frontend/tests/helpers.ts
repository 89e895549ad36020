/** Test fakes: a scriptable fetch backend and a controllable WebSocket. */

import type { FetchFn, SocketLike } from "../src/api.js";
import type { DeviceStatus } from "../src/state.js";

export function makeStatus(id: string, over: Partial<DeviceStatus> = {}): DeviceStatus {
  return {
    device_id: id,
    battery_pct: 100,
    storage_pct: 0,
    ping_ms: 0.25,
    recording: false,
    last_sample_t: 0,
    alert: null,
    ...over,
  };
}

export interface FakeBackend {
  fetchFn: FetchFn;
  calls: { url: string; method: string; body?: string }[];
  devices: Map<string, DeviceStatus>;
  failDevices: Set<string>;
  down: boolean;
  annotations: { label: string; t_ns: number }[];
}

/** In-memory control API: GET /devices, POST actions, POST annotate. */
export function fakeBackend(ids: string[]): FakeBackend {
  const devices = new Map(ids.map((id) => [id, makeStatus(id)]));
  const backend: FakeBackend = {
    devices,
    calls: [],
    failDevices: new Set(),
    down: false,
    annotations: [],
    fetchFn: async (url, init) => {
      const method = init?.method ?? "GET";
      backend.calls.push({ url, method, body: init?.body as string | undefined });
      if (backend.down) throw new TypeError("fetch failed");
      const path = url.replace(/^https?:\/\/[^/]+/, "");
      if (path === "/devices" && method === "GET") {
        return jsonResponse([...devices.values()]);
      }
      const action = path.match(/^\/devices\/([^/]+)\/(start|stop|cancel|restart)$/);
      if (action && method === "POST") {
        const [, id, act] = action;
        const status = devices.get(id);
        if (!status) return jsonResponse({ ok: false, error: `unknown device: ${id}` }, 409);
        if (backend.failDevices.has(id)) {
          return jsonResponse({ ok: false, error: "device failed" }, 409);
        }
        status.recording = act === "start" || act === "restart";
        return jsonResponse({ device_id: id, action: act, ok: true });
      }
      if (path === "/session/annotate" && method === "POST") {
        const { label } = JSON.parse(init?.body as string);
        const ann = { label, t_ns: 1000 + backend.annotations.length };
        backend.annotations.push(ann);
        return jsonResponse(ann);
      }
      return jsonResponse({ error: "not found" }, 404);
    },
  };
  return backend;
}

function jsonResponse(body: unknown, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  } as Response;
}

export class FakeSocket implements SocketLike {
  static instances: FakeSocket[] = [];
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  onopen: (() => void) | null = null;
  closed = false;

  constructor(readonly url: string) {
    FakeSocket.instances.push(this);
  }

  open(): void {
    this.onopen?.();
  }

  push(msg: unknown): void {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }
}

export function fakeSocketFactory(): (url: string) => FakeSocket {
  FakeSocket.instances = [];
  return (url) => new FakeSocket(url);
}
