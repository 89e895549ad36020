/** Dashboard wire-up: status polling, live streams, controls. */

import { ApiClient, connectStream, FetchFn, SocketFactory, StreamSubscription } from "./api.js";
import { CardGrid } from "./cards.js";
import { SessionControls } from "./controls.js";
import { GazeChart, GazeMessage } from "./gazechart.js";
import { HeatmapMessage, HeatmapView } from "./heatmap.js";
import { AlertEvent, DashboardState } from "./state.js";

export interface DashboardOptions {
  refreshHz?: number; // status poll + gaze stream rate, default 1 Hz
  document?: Document;
  fetchFn?: FetchFn;
  socketFactory?: SocketFactory;
}

export interface Dashboard {
  state: DashboardState;
  grid: CardGrid;
  controls: SessionControls;
  heatmap: HeatmapView;
  gaze: GazeChart;
  stop(): void;
}

export function connectAndRender(apiBase: string, opts: DashboardOptions = {}): Dashboard {
  const doc = opts.document ?? document;
  const refreshHz = opts.refreshHz ?? 1.0;
  const api = opts.fetchFn ? new ApiClient(apiBase, opts.fetchFn) : new ApiClient(apiBase);
  const state = new DashboardState();

  const banner = doc.getElementById("banner");
  const toastBox = doc.getElementById("toasts");
  const gridEl = doc.getElementById("device-grid")!;
  const heatmapCanvas = doc.getElementById("heatmap") as HTMLCanvasElement | null;
  const gazeCanvas = doc.getElementById("gaze-chart") as HTMLCanvasElement | null;

  const grid = new CardGrid(gridEl, api, {
    onResult: (deviceId, ok, detail) => {
      pushToast(`${deviceId}: restart ${ok ? "ok" : "FAILED"} ${detail}`);
      void refresh();
    },
  });
  const controls = new SessionControls(api, state, (toast) =>
    pushToast(`${toast.deviceId}: ${toast.action} ${toast.ok ? "ok" : "FAILED"} ${toast.detail}`));
  const heatmap = new HeatmapView(heatmapCanvas);
  const gaze = new GazeChart(gazeCanvas);

  function pushToast(text: string): void {
    if (!toastBox) return;
    const el = doc.createElement("div");
    el.className = "toast";
    el.textContent = text;
    toastBox.appendChild(el);
    setTimeout(() => el.remove(), 6000);
  }

  function setConnection(status: "connected" | "reconnecting"): void {
    state.connection = status;
    if (banner) banner.hidden = status === "connected";
  }

  async function refresh(): Promise<void> {
    try {
      state.applyStatuses(await api.getDevices(), Date.now());
      setConnection("connected");
    } catch {
      setConnection("reconnecting");
    }
    state.markStale(Date.now());
    grid.render(state);
  }

  void refresh();
  const poll = setInterval(() => void refresh(), 1000 / refreshHz);

  const wsBase = apiBase.replace(/^http/, "ws");
  const factory = opts.socketFactory;
  const subs: StreamSubscription[] = [
    connectStream(`${wsBase}/streams/gaze?rate=${refreshHz}`,
      (msg) => gaze.apply(msg as GazeMessage), setConnection, factory),
    connectStream(`${wsBase}/streams/heatmap`,
      (msg) => heatmap.apply(msg as HeatmapMessage), setConnection, factory),
    connectStream(`${wsBase}/streams/alerts`, (msg) => {
      state.applyAlertEvent(msg as AlertEvent);
      grid.render(state);
    }, setConnection, factory),
  ];

  wireControlButtons(doc, grid, controls);
  return {
    state, grid, controls, heatmap, gaze,
    stop() {
      clearInterval(poll);
      subs.forEach((s) => s.close());
    },
  };
}

function wireControlButtons(doc: Document, grid: CardGrid, controls: SessionControls): void {
  for (const action of ["start", "stop", "cancel", "restart"]) {
    doc.getElementById(`btn-${action}`)?.addEventListener("click", () => {
      void controls.dispatch(action, [...grid.selected].sort());
    });
  }
  const annotateBtn = doc.getElementById("btn-annotate");
  const annotateInput = doc.getElementById("annotate-label") as HTMLInputElement | null;
  annotateBtn?.addEventListener("click", () => {
    const label = annotateInput?.value.trim();
    if (label) void controls.annotate(label);
  });
  const selectAll = doc.getElementById("btn-select-all");
  selectAll?.addEventListener("click", () => {
    doc.querySelectorAll<HTMLInputElement>(".device-card .select").forEach((cb) => {
      if (!cb.checked) cb.click();
    });
  });
}
