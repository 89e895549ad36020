/** Device status grid: one color-coded card per device. */

import type { ApiClient } from "./api.js";
import { cardHealth, DashboardState, DeviceCard } from "./state.js";

export interface CardGridOptions {
  onToggleSelect?: (deviceId: string, selected: boolean) => void;
  onResult?: (deviceId: string, ok: boolean, detail: string) => void;
}

export class CardGrid {
  readonly selected = new Set<string>();

  constructor(
    private readonly container: HTMLElement,
    private readonly api: ApiClient,
    private readonly options: CardGridOptions = {},
  ) {}

  render(state: DashboardState): void {
    for (const card of state.sortedCards()) {
      let el = this.container.querySelector<HTMLElement>(`[data-device="${card.id}"]`);
      if (!el) {
        el = this.buildCard(card.id);
        this.container.appendChild(el);
      }
      this.update(el, card);
    }
  }

  private buildCard(deviceId: string): HTMLElement {
    const el = document.createElement("div");
    el.className = "device-card";
    el.dataset.device = deviceId;
    el.innerHTML = `
      <header>
        <input type="checkbox" class="select" aria-label="select ${deviceId}">
        <span class="id">${deviceId}</span>
        <span class="rec"></span>
      </header>
      <div class="gauges">
        <span class="battery"></span><span class="storage"></span><span class="ping"></span>
      </div>
      <div class="alert-line"></div>
      <button class="restart">restart</button>`;
    const checkbox = el.querySelector<HTMLInputElement>(".select")!;
    checkbox.addEventListener("change", () => {
      if (checkbox.checked) this.selected.add(deviceId);
      else this.selected.delete(deviceId);
      this.options.onToggleSelect?.(deviceId, checkbox.checked);
    });
    el.querySelector<HTMLButtonElement>(".restart")!.addEventListener("click", () => {
      void this.api
        .action(deviceId, "restart")
        .then((r) => this.options.onResult?.(deviceId, r.ok, r.note ?? r.error ?? ""))
        .catch((e) => this.options.onResult?.(deviceId, false, String(e)));
    });
    return el;
  }

  private update(el: HTMLElement, card: DeviceCard): void {
    el.dataset.health = cardHealth(card);
    el.classList.toggle("stale", card.stale);
    el.querySelector(".battery")!.textContent = `bat ${card.battery.toFixed(0)}%`;
    el.querySelector(".storage")!.textContent = `sto ${card.storage.toFixed(0)}%`;
    el.querySelector(".ping")!.textContent = `${card.ping.toFixed(2)} ms`;
    el.querySelector(".rec")!.textContent = card.recording ? "REC" : "idle";
    const alertLine = el.querySelector(".alert-line")!;
    alertLine.textContent = card.failureBadge ?? card.alert ?? "";
  }
}
