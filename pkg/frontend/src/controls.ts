/** Batch session controls: start/stop/cancel/restart on a selection, plus
 * annotations. Every command resolves to a per-device toast; failures set a
 * badge on the failing card and never disappear silently. */

import type { ApiClient } from "./api.js";
import type { DashboardState } from "./state.js";

export interface Toast {
  deviceId: string;
  action: string;
  ok: boolean;
  detail: string;
}

export class SessionControls {
  toasts: Toast[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly state: DashboardState,
    private readonly onToast?: (toast: Toast) => void,
  ) {}

  /** Issue one POST per selected device; per-device results, no global abort. */
  async dispatch(action: string, deviceIds: string[]): Promise<Toast[]> {
    if (deviceIds.length === 0) return [];
    const results = await Promise.allSettled(
      deviceIds.map((id) => this.api.action(id, action)),
    );
    const batch: Toast[] = [];
    results.forEach((res, i) => {
      const deviceId = deviceIds[i];
      let toast: Toast;
      if (res.status === "fulfilled") {
        toast = {
          deviceId,
          action,
          ok: res.value.ok,
          detail: res.value.note ?? res.value.error ?? "",
        };
      } else {
        toast = { deviceId, action, ok: false, detail: String(res.reason) };
      }
      this.state.setFailureBadge(deviceId, toast.ok ? null : `${action} failed`);
      this.toasts.push(toast);
      batch.push(toast);
      this.onToast?.(toast);
    });
    return batch;
  }

  async annotate(label: string): Promise<{ label: string; t_ns: number }> {
    return this.api.annotate(label);
  }
}
