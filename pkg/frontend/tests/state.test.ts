import { describe, expect, it } from "vitest";

import { cardHealth, DashboardState, STALE_AFTER_MS } from "../src/state.js";
import { makeStatus } from "./helpers.js";

describe("DashboardState", () => {
  it("builds one healthy card per online device", () => {
    const state = new DashboardState();
    const statuses = Array.from({ length: 30 }, (_, i) =>
      makeStatus(`d${String(i).padStart(2, "0")}`));
    state.applyStatuses(statuses, 1000);
    expect(state.cards.size).toBe(30);
    for (const card of state.cards.values()) {
      expect(cardHealth(card)).toBe("healthy");
    }
  });

  it("is last-writer-wins per card", () => {
    const state = new DashboardState();
    state.applyStatuses([makeStatus("d00", { battery_pct: 80 })], 1000);
    state.applyStatuses([makeStatus("d00", { battery_pct: 55 })], 2000);
    expect(state.cards.get("d00")!.battery).toBe(55);
    expect(state.cards.get("d00")!.updatedAt).toBe(2000);
  });

  it("applies stall alerts and clears to the matching card", () => {
    const state = new DashboardState();
    state.applyStatuses([makeStatus("d00"), makeStatus("d01")], 0);
    state.applyAlertEvent({ type: "alert", key: "d01", last_seen_ns: 2_000_000_000 });
    expect(cardHealth(state.cards.get("d01")!)).toBe("alert");
    expect(state.cards.get("d01")!.alert).toContain("2.00s");
    expect(cardHealth(state.cards.get("d00")!)).toBe("healthy");
    state.applyAlertEvent({ type: "clear", key: "d01", t_ns: 3_000_000_000 });
    expect(cardHealth(state.cards.get("d01")!)).toBe("healthy");
  });

  it("greys out cards silent for more than five seconds", () => {
    const state = new DashboardState();
    state.applyStatuses([makeStatus("d00")], 0);
    state.applyStatuses([makeStatus("d01")], 4000);
    state.markStale(6000);
    expect(cardHealth(state.cards.get("d00")!)).toBe("stale");
    expect(cardHealth(state.cards.get("d01")!)).toBe("healthy");
    expect(STALE_AFTER_MS).toBe(5000);
  });

  it("flags low battery and full storage as warnings", () => {
    const state = new DashboardState();
    state.applyStatuses([
      makeStatus("d00", { battery_pct: 10 }),
      makeStatus("d01", { storage_pct: 95 }),
    ], 0);
    expect(cardHealth(state.cards.get("d00")!)).toBe("warning");
    expect(cardHealth(state.cards.get("d01")!)).toBe("warning");
  });
});
