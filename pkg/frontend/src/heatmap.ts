/** Central-view heatmap painting from downsampled grid messages. */

import { viridisTable } from "./viridis.js";

export interface HeatmapMessage {
  type: "heatmap";
  t_ns: number;
  width: number;
  height: number;
  cell_size: number;
  values: number[]; // row-major, already scaled to 0..255
}

/** Fill an RGBA pixel buffer (width*height*4) from grid values via viridis. */
export function paintHeatmap(values: number[], width: number, height: number,
                             out: Uint8ClampedArray): void {
  const table = viridisTable();
  for (let i = 0; i < width * height; i++) {
    const v = Math.max(0, Math.min(255, Math.round(values[i]))) * 3;
    out[i * 4] = table[v];
    out[i * 4 + 1] = table[v + 1];
    out[i * 4 + 2] = table[v + 2];
    out[i * 4 + 3] = 255;
  }
}

/** Grid cell (x, y) holding the maximum value. */
export function argmaxCell(values: number[], width: number): [number, number] {
  let best = 0;
  for (let i = 1; i < values.length; i++) {
    if (values[i] > values[best]) best = i;
  }
  return [best % width, Math.floor(best / width)];
}

/** Brightest painted pixel (x, y); viridis luminance rises with index so this
 * must land in the argmax cell. */
export function brightestPixel(buf: Uint8ClampedArray, width: number): [number, number] {
  let best = 0;
  let bestSum = -1;
  for (let i = 0; i * 4 < buf.length; i++) {
    const s = buf[i * 4] + buf[i * 4 + 1] + buf[i * 4 + 2];
    if (s > bestSum) {
      bestSum = s;
      best = i;
    }
  }
  return [best % width, Math.floor(best / width)];
}

export class HeatmapView {
  lastMessage: HeatmapMessage | null = null;
  redraws = 0;

  constructor(private readonly canvas: HTMLCanvasElement | null) {}

  apply(msg: HeatmapMessage): void {
    this.lastMessage = msg;
    this.redraws += 1;
    if (!this.canvas) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const img = ctx.createImageData(msg.width, msg.height);
    paintHeatmap(msg.values, msg.width, msg.height, img.data);
    this.canvas.width = msg.width;
    this.canvas.height = msg.height;
    ctx.putImageData(img, 0, 0);
  }

  /** Argmax in central-view pixel coordinates. */
  argmaxPx(): [number, number] | null {
    if (!this.lastMessage) return null;
    const [cx, cy] = argmaxCell(this.lastMessage.values, this.lastMessage.width);
    const s = this.lastMessage.cell_size;
    return [(cx + 0.5) * s, (cy + 0.5) * s];
  }
}
