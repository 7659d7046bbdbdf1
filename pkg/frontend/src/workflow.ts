// Session orchestration: upload -> mesh -> spec -> deform -> poll -> playback.

import type { ApiClient } from "./api.js";
import type { EditorState } from "./state.js";
import type { DeformStatus, FlowPayload, MeshPayload, StepPayload } from "./types.js";

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export interface SessionFrames {
  mesh: MeshPayload;
  steps: StepPayload[];
  flow: FlowPayload;
}

export async function startSession(
  api: ApiClient,
  state: EditorState,
  depthBytes: Uint8Array,
  meshOptions: { tau_d?: number; tau_b?: number | "auto"; reduction?: number } = {},
): Promise<{ vertices: number; faces: number }> {
  const { id } = await api.createSession();
  state.sessionId = id;
  await api.uploadDepth(id, depthBytes);
  return api.requestMesh(id, meshOptions);
}

export async function pollUntilDone(
  api: ApiClient,
  sid: string,
  intervalMs = 250,
  onProgress?: (status: DeformStatus) => void,
  maxPolls = 4000,
): Promise<DeformStatus> {
  for (let i = 0; i < maxPolls; i++) {
    const status = await api.deformStatus(sid);
    onProgress?.(status);
    if (status.status === "done") return status;
    if (status.status === "error") {
      throw new Error(status.error ?? "deformation failed");
    }
    await sleep(intervalMs);
  }
  throw new Error("deformation did not finish in time");
}

/** Submit the current editor content and collect every playback frame. */
export async function deformAndCollect(
  api: ApiClient,
  state: EditorState,
  onProgress?: (status: DeformStatus) => void,
  pollIntervalMs = 250,
): Promise<SessionFrames> {
  const sid = state.sessionId;
  if (!sid) throw new Error("no active session");
  await api.putDragSpec(sid, state.toDragSpec());
  await api.startDeform(sid, state.deformParams());
  const status = await pollUntilDone(api, sid, pollIntervalMs, onProgress);
  state.totalSteps = status.K;
  const mesh = await api.fetchMesh(sid);
  const steps: StepPayload[] = [];
  for (let k = 0; k <= status.K; k++) {
    steps.push(await api.fetchStep(sid, k));
  }
  const flow = await api.fetchFlow(sid, {
    strategy: state.params.strategy,
    count: state.params.count,
    grid: state.params.grid,
  });
  state.setCursor(status.K);
  return { mesh, steps, flow };
}

/** Re-query the sampled flow with the panel's current sampling knobs. */
export async function refreshFlow(api: ApiClient, state: EditorState): Promise<FlowPayload> {
  const sid = state.sessionId;
  if (!sid) throw new Error("no active session");
  return api.fetchFlow(sid, {
    strategy: state.params.strategy,
    count: state.params.count,
    grid: state.params.grid,
  });
}

/** Round-trip check used by the editor's status line: what the service stores
 *  must serialize byte-identically to what we sent. */
export async function dragSpecRoundTrips(api: ApiClient, state: EditorState): Promise<boolean> {
  const sid = state.sessionId;
  if (!sid) throw new Error("no active session");
  const local = state.toDragSpec();
  await api.putDragSpec(sid, local);
  const served = await api.fetchDragSpec(sid);
  return JSON.stringify(served) === JSON.stringify(local);
}

/** Assemble a Wavefront OBJ from the mesh topology plus step positions. */
export function exportObj(mesh: MeshPayload, step: StepPayload): string {
  const lines: string[] = [];
  for (const v of step.vertices) {
    lines.push(`v ${v[0]} ${v[1]} ${v[2]}`);
  }
  for (const f of mesh.faces) {
    lines.push(`f ${f[0] + 1} ${f[1] + 1} ${f[2] + 1}`);
  }
  return lines.join("\n") + "\n";
}

export function exportFlowJson(flow: FlowPayload): string {
  return JSON.stringify(flow, null, 1);
}
