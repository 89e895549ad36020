/** Live per-device x/y time series from the gaze WebSocket. */

export interface GazeMessage {
  type: "gaze";
  batches: Record<string, [number, number, number][]>; // device -> [t_ns, x, y]
}

export interface GazePoint {
  t_ns: number;
  x: number;
  y: number;
}

/** Bounded per-device buffers; one redraw per received message, never more
 * (the chart shows only what the subscribed stream delivered). */
export class GazeChart {
  readonly series = new Map<string, GazePoint[]>();
  redraws = 0;

  constructor(
    private readonly canvas: HTMLCanvasElement | null,
    readonly maxPoints = 600,
  ) {}

  apply(msg: GazeMessage): void {
    for (const [device, rows] of Object.entries(msg.batches)) {
      let buf = this.series.get(device);
      if (!buf) {
        buf = [];
        this.series.set(device, buf);
      }
      for (const [t_ns, x, y] of rows) {
        buf.push({ t_ns, x, y });
      }
      if (buf.length > this.maxPoints) {
        buf.splice(0, buf.length - this.maxPoints);
      }
    }
    this.redraws += 1;
    this.draw();
  }

  private draw(): void {
    if (!this.canvas) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    let t0 = Infinity;
    let t1 = -Infinity;
    for (const buf of this.series.values()) {
      if (buf.length) {
        t0 = Math.min(t0, buf[0].t_ns);
        t1 = Math.max(t1, buf[buf.length - 1].t_ns);
      }
    }
    if (!(t1 > t0)) return;
    const devices = [...this.series.keys()].sort();
    devices.forEach((device, di) => {
      const buf = this.series.get(device)!;
      const hue = Math.round(((di * 0.618033988749895) % 1) * 360);
      for (const [coord, style] of [["x", `hsl(${hue} 75% 60%)`],
                                    ["y", `hsl(${hue} 75% 35%)`]] as const) {
        ctx.strokeStyle = style;
        ctx.beginPath();
        buf.forEach((p, i) => {
          const px = ((p.t_ns - t0) / (t1 - t0)) * width;
          const py = height - (p[coord] / 1600) * height;
          if (i === 0) ctx.moveTo(px, py);
          else ctx.lineTo(px, py);
        });
        ctx.stroke();
      }
    });
  }
}
