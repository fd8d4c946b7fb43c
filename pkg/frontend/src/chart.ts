/** Inline SVG chart of the estimation trajectory, one point per round.
 *
 * X is review cost (events / pool size). The left scale carries the
 * estimated total positives R_E, the right scale the estimated recall
 * |L_R| / R_E in [0, 1]. Pure string builder so it renders identically in
 * the browser and in tests.
 */

import type { TracePayload } from "./api.js";

const WIDTH = 640;
const HEIGHT = 260;
const MARGIN = { top: 18, right: 46, bottom: 34, left: 52 };

interface Point {
  cost: number;
  estimate: number | null;
  recall: number | null;
}

function points(trace: TracePayload): Point[] {
  return trace.rounds.map((round) => {
    const estimate = round.r_e;
    const recall =
      estimate !== null && estimate > 0
        ? Math.min(round.positives / estimate, 1.0)
        : null;
    return {
      cost: trace.pool_size > 0 ? round.total_events / trace.pool_size : 0,
      estimate,
      recall,
    };
  });
}

function polyline(
  coords: Array<[number, number] | null>,
  cls: string,
): string {
  const runs: string[] = [];
  let current: string[] = [];
  for (const pair of coords) {
    if (pair === null) {
      if (current.length > 0) runs.push(current.join(" "));
      current = [];
    } else {
      current.push(`${pair[0].toFixed(1)},${pair[1].toFixed(1)}`);
    }
  }
  if (current.length > 0) runs.push(current.join(" "));
  return runs
    .map((pts) => `<polyline class="${cls}" fill="none" points="${pts}"/>`)
    .join("");
}

export function buildChart(trace: TracePayload): string {
  const data = points(trace);
  if (data.length === 0) {
    return (
      `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img">` +
      `<text x="${WIDTH / 2}" y="${HEIGHT / 2}" text-anchor="middle" ` +
      `class="chart-empty">no completed rounds yet</text></svg>`
    );
  }

  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const maxCost = Math.max(0.05, ...data.map((p) => p.cost));
  const maxEstimate = Math.max(1, ...data.map((p) => p.estimate ?? 0));

  const xPos = (cost: number) => MARGIN.left + (cost / maxCost) * plotW;
  const yEstimate = (v: number) => MARGIN.top + plotH - (v / maxEstimate) * plotH;
  const yRecall = (v: number) => MARGIN.top + plotH - v * plotH;

  const estimateLine = polyline(
    data.map((p) => (p.estimate === null ? null : [xPos(p.cost), yEstimate(p.estimate)])),
    "chart-estimate",
  );
  const recallLine = polyline(
    data.map((p) => (p.recall === null ? null : [xPos(p.cost), yRecall(p.recall)])),
    "chart-recall",
  );

  const gridlines: string[] = [];
  const labels: string[] = [];
  for (let i = 0; i <= 4; i++) {
    const frac = i / 4;
    const y = MARGIN.top + plotH - frac * plotH;
    gridlines.push(
      `<line class="chart-grid" x1="${MARGIN.left}" y1="${y.toFixed(1)}" ` +
        `x2="${MARGIN.left + plotW}" y2="${y.toFixed(1)}"/>`,
    );
    labels.push(
      `<text class="chart-tick" x="${MARGIN.left - 6}" y="${(y + 4).toFixed(1)}" ` +
        `text-anchor="end">${(frac * maxEstimate).toFixed(0)}</text>`,
      `<text class="chart-tick" x="${MARGIN.left + plotW + 6}" ` +
        `y="${(y + 4).toFixed(1)}">${frac.toFixed(2)}</text>`,
    );
    const cost = frac * maxCost;
    const x = xPos(cost);
    labels.push(
      `<text class="chart-tick" x="${x.toFixed(1)}" y="${HEIGHT - 12}" ` +
        `text-anchor="middle">${cost.toFixed(2)}</text>`,
    );
  }

  return (
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" ` +
    `aria-label="estimation versus cost">` +
    gridlines.join("") +
    estimateLine +
    recallLine +
    labels.join("") +
    `<text class="chart-axis" x="${MARGIN.left + plotW / 2}" y="${HEIGHT - 1}" ` +
    `text-anchor="middle">cost (reviews / pool)</text>` +
    `<text class="chart-legend chart-estimate-label" x="${MARGIN.left}" y="12">` +
    `estimated positives R_E</text>` +
    `<text class="chart-legend chart-recall-label" x="${MARGIN.left + 220}" y="12">` +
    `estimated recall</text>` +
    `</svg>`
  );
}
