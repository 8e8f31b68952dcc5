// Pure view models. The data layer never rounds or rewrites numbers: the raw
// server bytes are carried verbatim, deltas are exact differences of the
// parsed payload, and formatting happens only in the render helpers.

import type { ErrorEnvelope, RecourseResponse, SweepCell } from "./api.js";
import type { ConstraintDraft } from "./draft.js";

export interface FeatureRow {
  name: string;
  original: number;
  counterfactual: number;
  delta: number;            // exactly x_c[j] - x0[j]
  locked: boolean;
  changed: boolean;
}

export interface RecourseView {
  raw: string;              // the server's JSON, byte for byte
  response: RecourseResponse;
  rows: FeatureRow[];
  certified: boolean;
  alreadyRobust: boolean;
  badges: { l2: number; l0: number; robustLogit: number; epsilon: number };
}

export function buildRecourseView(
  raw: string,
  response: RecourseResponse,
  featureNames: string[],
  draft: ConstraintDraft,
): RecourseView {
  const rows: FeatureRow[] = featureNames.map((name, j) => {
    const original = response.x0[j];
    const counterfactual = response.x_c[j];
    const delta = counterfactual - original;
    return {
      name,
      original,
      counterfactual,
      delta,
      locked: draft.features[name]?.locked ?? false,
      changed: delta !== 0,
    };
  });
  return {
    raw,
    response,
    rows,
    certified: response.flags.length === 0,
    alreadyRobust: response.l2 === 0,
    badges: {
      l2: response.l2,
      l0: response.l0,
      robustLogit: response.robust_logit,
      epsilon: response.epsilon,
    },
  };
}

export function noRecourseBanner(envelope: ErrorEnvelope): string {
  const hint = envelope.detail?.["max_robust_logit"];
  const tail = hint === null || hint === undefined
    ? ""
    : ` (best worst-case score found: ${formatNumber(hint as number)})`;
  return `no robust recourse at this ε — raise ε or relax constraints${tail}`;
}

export interface SweepPoint {
  epsilon: number;
  status: string;
  l2: number | null;
  cell: SweepCell;          // full untouched record for click-to-load
}

export interface SweepChartModel {
  points: SweepPoint[];
  ok: SweepPoint[];
  monotone: boolean;        // l2 non-decreasing across successful points
}

export function buildSweepModel(results: SweepCell[]): SweepChartModel {
  const points: SweepPoint[] = results.map((cell) => ({
    epsilon: cell.epsilon,
    status: cell.status,
    l2: cell.status === "ok" ? (cell.l2 as number) : null,
    cell,
  }));
  const ok = points.filter((p) => p.status === "ok");
  let monotone = true;
  for (let i = 1; i < ok.length; i += 1) {
    if ((ok[i].l2 as number) < (ok[i - 1].l2 as number) - 1e-12) monotone = false;
  }
  return { points, ok, monotone };
}

// --- render-time helpers (the only place numbers are rounded) ---------------

export function formatNumber(v: number, digits = 3): string {
  return Number.isFinite(v) ? v.toFixed(digits) : String(v);
}

export function renderFeatureTable(view: RecourseView): string {
  const body = view.rows
    .map((row) => {
      const glyph = row.locked ? " \u{1f512}" : "";
      const cls = row.changed ? "changed" : "";
      return `<tr class="${cls}"><td>${row.name}${glyph}</td>` +
        `<td>${formatNumber(row.original)}</td>` +
        `<td>${formatNumber(row.counterfactual)}</td>` +
        `<td>${row.changed ? formatNumber(row.delta) : "—"}</td></tr>`;
    })
    .join("");
  return `<table><thead><tr><th>feature</th><th>original</th>` +
    `<th>counterfactual</th><th>delta</th></tr></thead><tbody>${body}</tbody></table>`;
}

export function renderBadges(view: RecourseView): string {
  const cls = view.certified ? "certified" : "flagged";
  const label = view.alreadyRobust
    ? "already robust"
    : view.certified ? "certified" : "not certified";
  return `<span class="badge ${cls}">${label}</span>` +
    `<span class="badge">l2 ${formatNumber(view.badges.l2)}</span>` +
    `<span class="badge">changed ${view.badges.l0}</span>` +
    `<span class="badge">worst-case score ${formatNumber(view.badges.robustLogit)}</span>`;
}

export function renderSweepSvg(
  model: SweepChartModel,
  width = 420,
  height = 180,
): string {
  const ok = model.ok;
  const pad = 28;
  if (ok.length === 0) {
    return `<svg width="${width}" height="${height}"><text x="${width / 2}" ` +
      `y="${height / 2}" text-anchor="middle">no successful points</text></svg>`;
  }
  const eps = ok.map((p) => p.epsilon);
  const l2s = ok.map((p) => p.l2 as number);
  const [e0, e1] = [Math.min(...eps), Math.max(...eps)];
  const [d0, d1] = [Math.min(...l2s), Math.max(...l2s)];
  const sx = (e: number) =>
    pad + (e1 === e0 ? 0.5 : (e - e0) / (e1 - e0)) * (width - 2 * pad);
  const sy = (d: number) =>
    height - pad - (d1 === d0 ? 0.5 : (d - d0) / (d1 - d0)) * (height - 2 * pad);
  const path = ok.map((p) => `${sx(p.epsilon)},${sy(p.l2 as number)}`).join(" ");
  const dots = ok
    .map((p, i) =>
      `<circle class="sweep-point" data-index="${i}" cx="${sx(p.epsilon)}" ` +
      `cy="${sy(p.l2 as number)}" r="5"><title>ε=${p.epsilon} ` +
      `l2=${formatNumber(p.l2 as number)}</title></circle>`)
    .join("");
  const fails = model.points
    .filter((p) => p.status !== "ok")
    .map((p) =>
      `<text x="${sx(p.epsilon)}" y="${height - 8}" text-anchor="middle" ` +
      `class="fail-marker">✕</text>`)
    .join("");
  return `<svg width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">` +
    `<polyline fill="none" stroke="currentColor" points="${path}"/>` +
    `${dots}${fails}</svg>`;
}
