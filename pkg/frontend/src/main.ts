// DOM wiring for the drag editor. All geometry comes from the service; this
// file only routes events into the state store and redraws the canvas.

import { ApiClient, ApiError } from "./api.js";
import { fitView, drawFrame, toImage } from "./render.js";
import { EditorState, PARAM_PRESETS, validateParams } from "./state.js";
import type { SessionFrames } from "./workflow.js";
import {
  deformAndCollect,
  dragSpecRoundTrips,
  exportFlowJson,
  exportObj,
  refreshFlow,
  startSession,
} from "./workflow.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("editor");
const ctx = canvas.getContext("2d")!;
const status = $<HTMLDivElement>("status");
const errorBox = $<HTMLDivElement>("error");
const scrub = $<HTMLInputElement>("scrub");
const stepLabel = $<HTMLSpanElement>("step-label");
const metricsBox = $<HTMLDivElement>("metrics");

const api = new ApiClient(
  (window as unknown as { FLOWMESH_API?: string }).FLOWMESH_API ?? "http://127.0.0.1:8787",
);
const state = new EditorState();

let frames: SessionFrames | null = null;
let depthImage: HTMLImageElement | null = null;
let depthBytes: Uint8Array | null = null;
let playTimer: number | null = null;

function showError(message: string): void {
  errorBox.textContent = message;
  errorBox.style.display = message ? "block" : "none";
}

function view() {
  return fitView(state.imageWidth || 1, state.imageHeight || 1, canvas.width, canvas.height);
}

function redraw(): void {
  const step = frames ? frames.steps[state.cursor] : null;
  drawFrame(
    ctx, view(), depthImage,
    frames ? frames.mesh : null,
    step,
    frames && state.overlays.sampled ? frames.flow : null,
    state.arrows,
    state.imageWidth
      ? { data: state.mask, width: state.imageWidth, height: state.imageHeight }
      : null,
    state.overlays,
  );
  stepLabel.textContent = frames ? `step ${state.cursor} / ${state.totalSteps}` : "no trace";
}

function readParams(): void {
  state.params.alpha = Number($<HTMLSelectElement>("alpha").value);
  state.params.beta = Number($<HTMLInputElement>("beta").value);
  state.params.lambda = Number($<HTMLInputElement>("lambda").value);
  state.params.steps = Number($<HTMLInputElement>("steps").value);
  state.params.grid = Number($<HTMLInputElement>("grid").value);
  state.params.count = Number($<HTMLInputElement>("count").value);
  state.params.strategy = $<HTMLSelectElement>("strategy").value as "magnitude" | "uniform";
}

function validatePanel(): boolean {
  readParams();
  const problems = validateParams(state.params);
  showError(problems.join("; "));
  $<HTMLButtonElement>("deform").disabled = problems.length > 0;
  return problems.length === 0;
}

// --- depth upload ---------------------------------------------------------

$<HTMLInputElement>("depth-file").addEventListener("change", async (ev) => {
  const input = ev.target as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) return;
  try {
    depthBytes = new Uint8Array(await file.arrayBuffer());
    const url = URL.createObjectURL(file);
    depthImage = new Image();
    await new Promise((resolve, reject) => {
      depthImage!.onload = resolve;
      depthImage!.onerror = reject;
      depthImage!.src = url;
    });
    state.setImage(depthImage.width, depthImage.height);
    state.fillMask();
    const summary = await startSession(api, state, depthBytes, { tau_b: 0 });
    status.textContent = `session ${state.sessionId}: ${summary.vertices} vertices, ${summary.faces} faces`;
    frames = null;
    showError("");
    redraw();
  } catch (err) {
    showError(err instanceof ApiError ? err.detail : String(err));
  }
});

// --- canvas interaction: drag = arrow, shift+drag = mask brush -------------

let dragStart: [number, number] | null = null;
let brushing = false;

canvas.addEventListener("mousedown", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const [x, y] = toImage(view(), ev.clientX - rect.left, ev.clientY - rect.top);
  if (ev.shiftKey) {
    brushing = true;
    state.brush(x, y, Number($<HTMLInputElement>("brush").value));
    redraw();
  } else {
    dragStart = [x, y];
  }
});

canvas.addEventListener("mousemove", (ev) => {
  if (!brushing) return;
  const rect = canvas.getBoundingClientRect();
  const [x, y] = toImage(view(), ev.clientX - rect.left, ev.clientY - rect.top);
  state.brush(x, y, Number($<HTMLInputElement>("brush").value));
  redraw();
});

canvas.addEventListener("mouseup", (ev) => {
  if (brushing) {
    brushing = false;
    return;
  }
  if (!dragStart) return;
  const rect = canvas.getBoundingClientRect();
  const [x, y] = toImage(view(), ev.clientX - rect.left, ev.clientY - rect.top);
  try {
    state.addArrow(
      [Math.round(dragStart[0]), Math.round(dragStart[1])],
      [Math.round(x), Math.round(y)],
    );
    showError("");
  } catch (err) {
    showError(String(err));
  }
  dragStart = null;
  redraw();
});

$<HTMLButtonElement>("clear-arrows").addEventListener("click", () => {
  state.clearArrows();
  redraw();
});

$<HTMLButtonElement>("fill-mask").addEventListener("click", () => {
  state.fillMask();
  redraw();
});

// --- parameter panel -------------------------------------------------------

for (const id of ["alpha", "beta", "lambda", "steps"]) {
  $(id).addEventListener("input", validatePanel);
}
// sampling knobs re-query the flow overlay on an existing trace
for (const id of ["grid", "count", "strategy"]) {
  $(id).addEventListener("input", async () => {
    if (!validatePanel() || !frames || !state.sessionId) return;
    try {
      frames.flow = await refreshFlow(api, state);
      redraw();
    } catch (err) {
      showError(err instanceof ApiError ? err.detail : String(err));
    }
  });
}
$<HTMLSelectElement>("alpha").innerHTML = PARAM_PRESETS.alpha
  .map((a) => `<option value="${a}" ${a === 0.3 ? "selected" : ""}>${a}</option>`)
  .join("");

// --- deform + playback ------------------------------------------------------

$<HTMLButtonElement>("deform").addEventListener("click", async () => {
  if (!validatePanel()) return;
  try {
    status.textContent = "checking drag-spec round-trip...";
    const ok = await dragSpecRoundTrips(api, state);
    status.textContent = ok ? "spec round-trip OK; deforming..." : "spec round-trip MISMATCH";
    frames = await deformAndCollect(api, state, (s) => {
      status.textContent = `deforming: step ${s.step_k}/${s.K}` +
        (s.energy != null ? ` energy ${s.energy.toExponential(3)}` : "");
    });
    scrub.max = String(state.totalSteps);
    scrub.value = String(state.totalSteps);
    const metrics = await api.fetchMetrics(state.sessionId!);
    metricsBox.textContent =
      `MELR ${metrics.melr.toFixed(3)} | mean rigidity error ${metrics.m_arap_error.toExponential(3)}`;
    status.textContent = "done";
    redraw();
  } catch (err) {
    showError(err instanceof ApiError ? err.detail : String(err));
    status.textContent = "failed";
  }
});

scrub.addEventListener("input", () => {
  state.setCursor(Number(scrub.value));
  redraw();
});

$<HTMLButtonElement>("play").addEventListener("click", () => {
  if (playTimer != null) {
    clearInterval(playTimer);
    playTimer = null;
    return;
  }
  state.setCursor(0);
  playTimer = window.setInterval(() => {
    if (state.cursor >= state.totalSteps) {
      clearInterval(playTimer!);
      playTimer = null;
      return;
    }
    state.setCursor(state.cursor + 1);
    scrub.value = String(state.cursor);
    redraw();
  }, 250);
});

for (const key of ["wireframe", "flow", "sampled"] as const) {
  $<HTMLInputElement>(`toggle-${key}`).addEventListener("change", (ev) => {
    state.overlays[key] = (ev.target as HTMLInputElement).checked;
    redraw();
  });
}

// --- exports ----------------------------------------------------------------

function download(name: string, text: string): void {
  const blob = new Blob([text], { type: "application/octet-stream" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

$<HTMLButtonElement>("export-flow").addEventListener("click", () => {
  if (frames) download("flow.json", exportFlowJson(frames.flow));
});

$<HTMLButtonElement>("export-obj").addEventListener("click", () => {
  if (frames) download("deformed.obj", exportObj(frames.mesh, frames.steps[state.totalSteps]));
});

validatePanel();
redraw();
