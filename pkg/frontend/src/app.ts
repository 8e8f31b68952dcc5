// Browser wiring for the recourse explorer. All numeric reasoning stays on
// the server; this file only collects the user's constraint edits, fires the
// requests, and renders the returned view models. One generation request is
// in flight at a time: a new click aborts and replaces the previous one.

import { ApiError, Client } from "./api.js";
import type { FeatureSpec, RecourseResponse, SweepCell } from "./api.js";
import {
  draftFromSchema, recourseRequest, serializeConstraints, validateDraft,
} from "./draft.js";
import type { ConstraintDraft } from "./draft.js";
import {
  buildRecourseView, buildSweepModel, formatNumber, noRecourseBanner,
  renderBadges, renderFeatureTable, renderSweepSvg,
} from "./view.js";

const $ = (id: string) => document.getElementById(id) as HTMLElement;

interface AppState {
  client: Client;
  sid: string | null;
  features: FeatureSpec[];
  draft: ConstraintDraft | null;
  samples: number[][];
  sampleLabels: number[];
  x0: number[] | null;
  inflight: AbortController | null;
}

const state: AppState = {
  client: new Client(""),
  sid: null,
  features: [],
  draft: null,
  samples: [],
  sampleLabels: [],
  x0: null,
  inflight: null,
};

function banner(text: string, kind: "info" | "error" = "info") {
  const el = $("banner");
  el.textContent = text;
  el.className = `banner ${kind}`;
}

function renderConstraintEditor() {
  if (!state.draft) return;
  const rows = state.features.map((f) => {
    const fd = state.draft!.features[f.name];
    return `<tr>
      <td>${f.name}${f.immutable ? " \u{1f512}" : ""}</td>
      <td><input type="checkbox" data-lock="${f.name}" ${fd.locked ? "checked" : ""}></td>
      <td><input type="number" step="any" data-lo="${f.name}" value="${fd.lo ?? ""}" ${fd.locked ? "disabled" : ""}></td>
      <td><input type="number" step="any" data-hi="${f.name}" value="${fd.hi ?? ""}" ${fd.locked ? "disabled" : ""}></td>
      <td><select data-dir="${f.name}" ${fd.locked ? "disabled" : ""}>
        <option value="" ${fd.direction === null ? "selected" : ""}>free</option>
        <option value="up" ${fd.direction === "up" ? "selected" : ""}>non-decreasing</option>
        <option value="down" ${fd.direction === "down" ? "selected" : ""}>non-increasing</option>
      </select></td>
    </tr>`;
  }).join("");
  $("constraints").innerHTML =
    `<table><thead><tr><th>feature</th><th>lock</th><th>min</th><th>max</th>` +
    `<th>direction</th></tr></thead><tbody>${rows}</tbody></table>`;

  $("constraints").querySelectorAll("[data-lock]").forEach((el) => {
    el.addEventListener("change", (ev) => {
      const t = ev.target as HTMLInputElement;
      state.draft!.features[t.dataset.lock!].locked = t.checked;
      renderConstraintEditor();
    });
  });
  $("constraints").querySelectorAll("[data-lo],[data-hi]").forEach((el) => {
    el.addEventListener("change", (ev) => {
      const t = ev.target as HTMLInputElement;
      const name = t.dataset.lo ?? t.dataset.hi!;
      const value = t.value === "" ? null : Number(t.value);
      if (t.dataset.lo) state.draft!.features[name].lo = value;
      else state.draft!.features[name].hi = value;
    });
  });
  $("constraints").querySelectorAll("[data-dir]").forEach((el) => {
    el.addEventListener("change", (ev) => {
      const t = ev.target as HTMLSelectElement;
      state.draft!.features[t.dataset.dir!].direction =
        t.value === "" ? null : (t.value as "up" | "down");
    });
  });
}

function renderSamplePicker() {
  const options = state.samples.map((_, i) =>
    `<option value="${i}">row ${i} (label ${state.sampleLabels[i]})</option>`,
  ).join("");
  ($("sample") as HTMLSelectElement).innerHTML = options;
  state.x0 = state.samples[0] ?? null;
}

async function initSession() {
  const csv = ($("csv") as HTMLTextAreaElement).value;
  const schemaText = ($("schema") as HTMLTextAreaElement).value;
  try {
    const sid = await state.client.createSession();
    state.sid = sid;
    const ds = await state.client.loadDataset(sid, {
      csv_text: csv,
      feature_schema: JSON.parse(schemaText),
      balance: true,
    });
    banner(`dataset loaded: ${ds.data.n} rows, ${ds.data.d} columns`);
    state.samples = ds.data.samples;
    state.sampleLabels = ds.data.sample_labels;
    await state.client.trainModel(sid, { lam: 0.001 });
    const eps = Number(($("epsilon") as HTMLInputElement).value);
    await state.client.buildEllipsoid(sid, { epsilon_relative: eps });
    const schema = await state.client.getSchema(sid);
    state.features = schema.data.features;
    state.draft = draftFromSchema(state.features);
    renderConstraintEditor();
    renderSamplePicker();
    banner(`session ${sid} ready`);
  } catch (err) {
    banner(err instanceof ApiError ? err.message : String(err), "error");
  }
}

function currentDraft(): ConstraintDraft | null {
  if (!state.draft) return null;
  state.draft.epsilon = Number(($("epsilon") as HTMLInputElement).value);
  state.draft.method =
    ($("method") as HTMLSelectElement).value as ConstraintDraft["method"];
  state.draft.sparsity = ($("sparsity") as HTMLInputElement).checked;
  const errors = validateDraft(state.draft, state.features);
  if (errors.length) {
    banner(errors.join("; "), "error");
    return null;
  }
  return state.draft;
}

function replaceInflight(): AbortSignal {
  state.inflight?.abort();
  state.inflight = new AbortController();
  return state.inflight.signal;
}

function showRecourse(raw: string, data: RecourseResponse) {
  const view = buildRecourseView(
    raw, data, state.features.map((f) => f.name), state.draft!);
  $("badges").innerHTML = renderBadges(view);
  $("result").innerHTML = renderFeatureTable(view);
  banner(view.alreadyRobust ? "already robust" : "recourse ready");
}

async function generate() {
  const draft = currentDraft();
  if (!draft || !state.sid || !state.x0) return;
  try {
    await state.client.buildEllipsoid(state.sid, {
      epsilon_relative: draft.epsilon });
    const r = await state.client.recourse(
      state.sid, recourseRequest(draft, state.x0), replaceInflight());
    showRecourse(r.raw, r.data);
  } catch (err) {
    if (err instanceof ApiError && err.status === 422) {
      banner(noRecourseBanner(err.envelope), "error");
    } else if (!(err instanceof DOMException && err.name === "AbortError")) {
      banner(String(err), "error");
    }
  }
}

async function sweep() {
  const draft = currentDraft();
  if (!draft || !state.sid || !state.x0) return;
  const grid = ($("grid") as HTMLInputElement).value
    .split(",").map((s) => Number(s.trim())).filter((v) => v > 0)
    .sort((a, b) => a - b);
  try {
    const r = await state.client.sweep(state.sid, {
      x0: state.x0,
      epsilons: grid,
      method: draft.method,
      constraints: serializeConstraints(draft),
    }, replaceInflight());
    const model = buildSweepModel(r.data.results);
    $("chart").innerHTML = renderSweepSvg(model);
    if (!model.monotone) banner("server flagged a non-monotone sweep", "error");
    $("chart").querySelectorAll(".sweep-point").forEach((el) => {
      el.addEventListener("click", (ev) => {
        const i = Number((ev.target as SVGElement).dataset.index);
        const cell = model.ok[i].cell as SweepCell & RecourseResponse;
        // the clicked point becomes the current view (feeds the next edit)
        showRecourse(JSON.stringify(cell), cell);
      });
    });
  } catch (err) {
    if (err instanceof ApiError && err.status === 422) {
      banner(noRecourseBanner(err.envelope), "error");
      $("chart").innerHTML = renderSweepSvg(buildSweepModel(
        (err.envelope.detail["results"] as SweepCell[]) ?? []));
    } else {
      banner(String(err), "error");
    }
  }
}

export function mount() {
  $("connect").addEventListener("click", () => void initSession());
  $("generate").addEventListener("click", () => void generate());
  $("sweep-btn").addEventListener("click", () => void sweep());
  ($("sample") as HTMLSelectElement).addEventListener("change", (ev) => {
    state.x0 = state.samples[Number((ev.target as HTMLSelectElement).value)];
  });
}

if (typeof document !== "undefined" && document.getElementById("connect")) {
  mount();
}
