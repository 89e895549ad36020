/** Dashboard state: device cards, alert bookkeeping, staleness.
 *
 * The dashboard is a pure client; everything here derives from API
 * messages, so a page reload reconstructs identical state from the GET
 * endpoints. Card updates are last-writer-wins.
 */

export interface DeviceStatus {
  device_id: string;
  battery_pct: number;
  storage_pct: number;
  ping_ms: number;
  recording: boolean;
  last_sample_t: number | null;
  alert: string | null;
}

export interface AlertEvent {
  type: "alert" | "clear";
  key: string;
  last_seen_ns?: number;
  t_ns?: number;
}

export type Health = "healthy" | "warning" | "alert" | "stale";

export interface DeviceCard {
  id: string;
  battery: number;
  storage: number;
  ping: number;
  recording: boolean;
  alert: string | null;
  /** wall-clock ms of the latest status message applied to this card */
  updatedAt: number;
  stale: boolean;
  /** last command failure shown as a badge, cleared by the next success */
  failureBadge: string | null;
}

export const STALE_AFTER_MS = 5000;
export const BATTERY_WARNING_PCT = 20;
export const STORAGE_WARNING_PCT = 90;

export function cardHealth(card: DeviceCard): Health {
  if (card.stale) return "stale";
  if (card.alert !== null || card.failureBadge !== null) return "alert";
  if (card.battery < BATTERY_WARNING_PCT || card.storage > STORAGE_WARNING_PCT) return "warning";
  return "healthy";
}

export class DashboardState {
  cards = new Map<string, DeviceCard>();
  alerts: AlertEvent[] = [];
  connection: "connected" | "reconnecting" = "connected";

  applyStatuses(statuses: DeviceStatus[], nowMs: number): void {
    for (const s of statuses) {
      const prev = this.cards.get(s.device_id);
      this.cards.set(s.device_id, {
        id: s.device_id,
        battery: s.battery_pct,
        storage: s.storage_pct,
        ping: s.ping_ms,
        recording: s.recording,
        alert: s.alert,
        updatedAt: nowMs,
        stale: false,
        failureBadge: prev?.failureBadge ?? null,
      });
    }
  }

  applyAlertEvent(event: AlertEvent): void {
    this.alerts.push(event);
    const card = this.cards.get(event.key);
    if (!card) return;
    if (event.type === "alert") {
      const since = event.last_seen_ns !== undefined
        ? `no data since t=${(event.last_seen_ns / 1e9).toFixed(2)}s`
        : "stream stalled";
      card.alert = since;
    } else {
      card.alert = null;
    }
  }

  setFailureBadge(deviceId: string, badge: string | null): void {
    const card = this.cards.get(deviceId);
    if (card) card.failureBadge = badge;
  }

  /** Grey out cards that have not received a status update recently. */
  markStale(nowMs: number, staleAfterMs: number = STALE_AFTER_MS): void {
    for (const card of this.cards.values()) {
      card.stale = nowMs - card.updatedAt > staleAfterMs;
    }
  }

  sortedCards(): DeviceCard[] {
    return [...this.cards.values()].sort((a, b) => a.id.localeCompare(b.id));
  }
}
