/** Self-contained SVG line charts: axes, ticks, polylines, markers, legend. */

export interface Series {
  label: string;
  x: number[];
  y: number[];
  color: string;
  dash?: string;
  markers?: boolean;
}

export interface Marker {
  x: number;
  y: number;
  color: string;
  label: string;
  shape?: "circle" | "triangle" | "cross";
}

export interface ChartSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  points?: Marker[];
  width?: number;
  height?: number;
  equalAspect?: boolean;
}

const MARGIN = { top: 36, right: 24, bottom: 44, left: 56 };

function finite(values: number[]): number[] {
  return values.filter((v) => Number.isFinite(v));
}

function bounds(values: number[]): [number, number] {
  const vals = finite(values);
  if (vals.length === 0) return [0, 1];
  let lo = Math.min(...vals);
  let hi = Math.max(...vals);
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const pad = 0.05 * (hi - lo);
  return [lo - pad, hi + pad];
}

function ticks(lo: number, hi: number, count = 5): number[] {
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const candidates = [step, 2 * step, 5 * step, 10 * step];
  const chosen = candidates.find((s) => span / s <= count + 1) ?? 10 * step;
  const first = Math.ceil(lo / chosen) * chosen;
  const out: number[] = [];
  for (let v = first; v <= hi + 1e-12; v += chosen) {
    out.push(Number(v.toPrecision(10)));
  }
  return out;
}

function fmt(v: number): string {
  return Math.abs(v) >= 1000 || (v !== 0 && Math.abs(v) < 0.01)
    ? v.toExponential(1)
    : String(Number(v.toPrecision(4)));
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

/** Render a chart to an SVG document string. */
export function renderChart(spec: ChartSpec): string {
  const width = spec.width ?? 720;
  const height = spec.height ?? 480;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const allX = spec.series.flatMap((s) => s.x).concat((spec.points ?? []).map((p) => p.x));
  const allY = spec.series.flatMap((s) => s.y).concat((spec.points ?? []).map((p) => p.y));
  let [x0, x1] = bounds(allX);
  let [y0, y1] = bounds(allY);
  if (spec.equalAspect) {
    const spanX = x1 - x0;
    const spanY = y1 - y0;
    const span = Math.max(spanX, spanY * (plotW / plotH));
    const cx = (x0 + x1) / 2;
    const cy = (y0 + y1) / 2;
    x0 = cx - span / 2;
    x1 = cx + span / 2;
    const ySpan = span * (plotH / plotW);
    y0 = cy - ySpan / 2;
    y1 = cy + ySpan / 2;
  }

  const sx = (v: number) => MARGIN.left + ((v - x0) / (x1 - x0)) * plotW;
  const sy = (v: number) => MARGIN.top + plotH - ((v - y0) / (y1 - y0)) * plotH;

  const parts: string[] = [];
  parts.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`);
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  parts.push(`<text x="${width / 2}" y="20" text-anchor="middle" font-size="15" font-family="sans-serif">${esc(spec.title)}</text>`);

  for (const tx of ticks(x0, x1)) {
    const px = sx(tx);
    parts.push(`<line x1="${px}" y1="${MARGIN.top}" x2="${px}" y2="${MARGIN.top + plotH}" stroke="#ddd"/>`);
    parts.push(`<text x="${px}" y="${MARGIN.top + plotH + 16}" text-anchor="middle" font-size="11" font-family="sans-serif">${fmt(tx)}</text>`);
  }
  for (const ty of ticks(y0, y1)) {
    const py = sy(ty);
    parts.push(`<line x1="${MARGIN.left}" y1="${py}" x2="${MARGIN.left + plotW}" y2="${py}" stroke="#ddd"/>`);
    parts.push(`<text x="${MARGIN.left - 6}" y="${py + 4}" text-anchor="end" font-size="11" font-family="sans-serif">${fmt(ty)}</text>`);
  }
  parts.push(`<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" fill="none" stroke="#444"/>`);
  parts.push(`<text x="${MARGIN.left + plotW / 2}" y="${height - 10}" text-anchor="middle" font-size="12" font-family="sans-serif">${esc(spec.xLabel)}</text>`);
  parts.push(`<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">${esc(spec.yLabel)}</text>`);

  for (const s of spec.series) {
    const pts: string[] = [];
    for (let i = 0; i < s.x.length; i++) {
      if (Number.isFinite(s.x[i]) && Number.isFinite(s.y[i])) {
        pts.push(`${sx(s.x[i]).toFixed(2)},${sy(s.y[i]).toFixed(2)}`);
      }
    }
    const dash = s.dash ? ` stroke-dasharray="${s.dash}"` : "";
    parts.push(`<polyline points="${pts.join(" ")}" fill="none" stroke="${s.color}" stroke-width="1.6"${dash}/>`);
    if (s.markers) {
      for (const p of pts) {
        const [px, py] = p.split(",");
        parts.push(`<circle cx="${px}" cy="${py}" r="2.4" fill="${s.color}"/>`);
      }
    }
  }

  for (const m of spec.points ?? []) {
    if (!Number.isFinite(m.x) || !Number.isFinite(m.y)) continue;
    const px = sx(m.x);
    const py = sy(m.y);
    if (m.shape === "triangle") {
      parts.push(`<polygon points="${px},${py - 6} ${px - 5},${py + 4} ${px + 5},${py + 4}" fill="${m.color}"/>`);
    } else if (m.shape === "cross") {
      parts.push(`<path d="M ${px - 5} ${py - 5} L ${px + 5} ${py + 5} M ${px - 5} ${py + 5} L ${px + 5} ${py - 5}" stroke="${m.color}" stroke-width="2"/>`);
    } else {
      parts.push(`<circle cx="${px}" cy="${py}" r="5" fill="${m.color}"/>`);
    }
  }

  let ly = MARGIN.top + 14;
  const legend = spec.series.map((s) => ({ label: s.label, color: s.color }))
    .concat((spec.points ?? []).slice(0, 1).map((m) => ({ label: m.label, color: m.color })));
  for (const item of legend) {
    parts.push(`<rect x="${MARGIN.left + 10}" y="${ly - 9}" width="12" height="4" fill="${item.color}"/>`);
    parts.push(`<text x="${MARGIN.left + 28}" y="${ly - 3}" font-size="11" font-family="sans-serif">${esc(item.label)}</text>`);
    ly += 16;
  }

  parts.push("</svg>");
  return parts.join("\n");
}
