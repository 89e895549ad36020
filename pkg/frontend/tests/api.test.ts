import { describe, expect, it, vi } from "vitest";

import { ApiClient, connectStream } from "../src/api.js";
import { fakeBackend, FakeSocket, fakeSocketFactory } from "./helpers.js";

describe("ApiClient", () => {
  it("fetches device statuses", async () => {
    const backend = fakeBackend(["d00", "d01"]);
    const api = new ApiClient("http://api", backend.fetchFn);
    const devices = await api.getDevices();
    expect(devices.map((d) => d.device_id)).toEqual(["d00", "d01"]);
    expect(backend.calls[0]).toMatchObject({ url: "http://api/devices", method: "GET" });
  });

  it("posts per-device actions", async () => {
    const backend = fakeBackend(["d00"]);
    const api = new ApiClient("http://api", backend.fetchFn);
    const result = await api.action("d00", "start");
    expect(result.ok).toBe(true);
    expect(backend.devices.get("d00")!.recording).toBe(true);
    expect(backend.calls[0]).toMatchObject({
      url: "http://api/devices/d00/start",
      method: "POST",
    });
  });

  it("reports failed actions without throwing", async () => {
    const backend = fakeBackend(["d00"]);
    backend.failDevices.add("d00");
    const api = new ApiClient("http://api", backend.fetchFn);
    const result = await api.action("d00", "start");
    expect(result.ok).toBe(false);
    expect(result.error).toContain("failed");
  });

  it("posts annotations with a JSON body", async () => {
    const backend = fakeBackend([]);
    const api = new ApiClient("http://api", backend.fetchFn);
    const ann = await api.annotate("intermission");
    expect(ann.label).toBe("intermission");
    expect(backend.annotations).toHaveLength(1);
    expect(backend.calls[0].body).toBe(JSON.stringify({ label: "intermission" }));
  });
});

describe("connectStream", () => {
  it("delivers parsed messages in order", () => {
    const factory = fakeSocketFactory();
    const seen: unknown[] = [];
    connectStream("ws://x/streams/alerts", (m) => seen.push(m), () => {}, factory);
    const socket = FakeSocket.instances[0];
    socket.open();
    socket.push({ type: "alert", key: "d00" });
    socket.push({ type: "clear", key: "d00" });
    expect(seen).toEqual([
      { type: "alert", key: "d00" },
      { type: "clear", key: "d00" },
    ]);
  });

  it("reconnects after a drop and reports status transitions", async () => {
    vi.useFakeTimers();
    try {
      const factory = fakeSocketFactory();
      const statuses: string[] = [];
      connectStream("ws://x/streams/gaze", () => {}, (s) => statuses.push(s), factory, 50);
      FakeSocket.instances[0].open();
      FakeSocket.instances[0].close(); // server drop
      expect(statuses).toEqual(["connected", "reconnecting"]);
      await vi.advanceTimersByTimeAsync(60);
      expect(FakeSocket.instances).toHaveLength(2);
      FakeSocket.instances[1].open();
      expect(statuses).toEqual(["connected", "reconnecting", "connected"]);
    } finally {
      vi.useRealTimers();
    }
  });

  it("close() stops reconnect attempts", async () => {
    vi.useFakeTimers();
    try {
      const factory = fakeSocketFactory();
      const sub = connectStream("ws://x/s", () => {}, () => {}, factory, 50);
      FakeSocket.instances[0].open();
      sub.close();
      await vi.advanceTimersByTimeAsync(500);
      expect(FakeSocket.instances).toHaveLength(1);
    } finally {
      vi.useRealTimers();
    }
  });
});
