import type { ReportSeries, SeriesPoint } from "./types.js";

// Charts draw the report JSON verbatim: aggregated values as a line, raw
// points as dots, the anomalous interval as a shaded band. No statistic is
// recomputed client-side; the only transform is coordinate scaling, plus
// decimation once a series outgrows what an SVG can sensibly hold.

export const MAX_POINTS = 10_000;

/**
 * Bucketed max-preserving decimation. Each bucket contributes its highest
 * point so spikes survive; at or under the limit the series is untouched.
 */
export function decimateMaxPreserving(
  points: SeriesPoint[],
  maxPoints = MAX_POINTS,
): SeriesPoint[] {
  if (points.length <= maxPoints) return points;
  const perBucket = points.length / maxPoints;
  const out: SeriesPoint[] = [];
  for (let i = 0; i < maxPoints; i++) {
    const lo = Math.floor(i * perBucket);
    const hi = Math.min(points.length, Math.floor((i + 1) * perBucket));
    let best = points[lo];
    for (let j = lo + 1; j < hi; j++) {
      if (points[j][1] > best[1]) best = points[j];
    }
    out.push(best);
  }
  return out;
}

export interface ChartGeometry {
  width: number;
  height: number;
  pad: number;
}

const DEFAULT_GEOMETRY: ChartGeometry = { width: 640, height: 160, pad: 10 };

function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  return [lo, hi];
}

const escapeHtml = (value: unknown): string =>
  String(value).replace(
    /[&<>"']/g,
    (c) =>
      ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" })[c]!,
  );

/** One <figure> per report series: shaded interval, line, raw dots. */
export function renderSeriesChart(
  series: ReportSeries,
  interval: [number, number],
  geometry: ChartGeometry = DEFAULT_GEOMETRY,
): string {
  const keyText = series.key.join(" ");
  const aggregated = decimateMaxPreserving(series.aggregated);
  const raw = decimateMaxPreserving(series.raw);
  const points = [...aggregated, ...raw];
  if (points.length === 0) {
    return `<figure class="chart empty" data-key="${escapeHtml(keyText)}"><figcaption>${escapeHtml(keyText)}</figcaption><p class="no-data">no series data</p></figure>`;
  }

  const { width, height, pad } = geometry;
  const [x0, x1] = extent(points.map((p) => p[0]));
  const [y0, y1] = extent(points.map((p) => p[1]));
  const sx = (x: number) => pad + ((x - x0) / (x1 - x0 || 1)) * (width - 2 * pad);
  const sy = (y: number) =>
    height - pad - ((y - y0) / (y1 - y0 || 1)) * (height - 2 * pad);

  const parts: string[] = [];
  const [a, b] = interval;
  if (b >= x0 && a <= x1) {
    const left = sx(Math.max(a, x0));
    const bandWidth = Math.max(4, sx(Math.min(b, x1)) - left);
    parts.push(
      `<rect class="anomaly" x="${left.toFixed(1)}" y="${pad}" width="${bandWidth.toFixed(1)}" height="${height - 2 * pad}"/>`,
    );
  }
  if (aggregated.length > 0) {
    const path = aggregated
      .map((p, i) => `${i ? "L" : "M"}${sx(p[0]).toFixed(1)} ${sy(p[1]).toFixed(1)}`)
      .join(" ");
    parts.push(`<path class="agg" d="${path}"/>`);
  }
  for (const p of raw) {
    parts.push(
      `<circle class="raw" cx="${sx(p[0]).toFixed(1)}" cy="${sy(p[1]).toFixed(1)}" r="1.5"/>`,
    );
  }
  return `<figure class="chart" data-key="${escapeHtml(keyText)}">
  <figcaption>${escapeHtml(keyText)}</figcaption>
  <svg viewBox="0 0 ${width} ${height}" role="img" aria-label="${escapeHtml(keyText)}">${parts.join("")}</svg>
</figure>`;
}
