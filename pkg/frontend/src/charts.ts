// Canvas time-series panel: measured minute series (from /v1/history) and
// the latest forecast on one shared time axis, with the server's congestion
// band underneath. All series come from API fields as-is.

import type { ForecastFrame, HistoryResponse } from "./types.js";
import { congestionColor } from "./types.js";

export class SeriesChart {
  constructor(private canvas: HTMLCanvasElement) {}

  render(history: HistoryResponse | null, forecast: ForecastFrame | null,
         junction: string | null): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const w = this.canvas.width;
    const h = this.canvas.height;
    ctx.clearRect(0, 0, w, h);
    ctx.font = "11px sans-serif";
    ctx.fillStyle = "#57606a";

    const measured = history?.series ?? [];
    let predicted: number[] = [];
    if (forecast && junction) {
      const j = forecast.junctions.indexOf(junction);
      if (j >= 0) predicted = forecast.values.map((row) => row[j]);
    }
    const n = measured.length + predicted.length;
    if (n === 0) {
      ctx.fillText("select a junction or segment", 10, h / 2);
      return;
    }
    const maxV = Math.max(1, ...measured, ...predicted);
    const pad = 18;
    const xAt = (i: number) => pad + (i / Math.max(1, n - 1)) * (w - 2 * pad);
    const yAt = (v: number) => h - pad - (v / maxV) * (h - 2.5 * pad);

    // congestion band from the server's history response
    const band = history?.congestion ?? [];
    band.forEach((stateVal, i) => {
      ctx.fillStyle = congestionColor(stateVal);
      ctx.globalAlpha = 0.25;
      ctx.fillRect(xAt(i), h - pad, Math.max(2, xAt(1) - xAt(0)), pad - 4);
      ctx.globalAlpha = 1.0;
    });

    ctx.strokeStyle = "#316dca";
    ctx.beginPath();
    measured.forEach((v, i) => (i === 0 ? ctx.moveTo(xAt(i), yAt(v)) : ctx.lineTo(xAt(i), yAt(v))));
    ctx.stroke();

    if (predicted.length > 0) {
      ctx.strokeStyle = "#8250df";
      ctx.setLineDash([5, 4]);
      ctx.beginPath();
      const offset = measured.length;
      const startV = measured.length > 0 ? measured[measured.length - 1] : predicted[0];
      ctx.moveTo(xAt(Math.max(0, offset - 1)), yAt(startV));
      predicted.forEach((v, i) => ctx.lineTo(xAt(offset + i), yAt(v)));
      ctx.stroke();
      ctx.setLineDash([]);
    }

    ctx.fillStyle = "#57606a";
    ctx.fillText(`max ${maxV.toFixed(0)} veh/min`, 8, 12);
    if (history) ctx.fillText(history.target, w - 120, 12);
  }
}
