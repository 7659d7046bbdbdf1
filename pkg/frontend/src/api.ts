// Thin typed client over the session REST API. No geometry math here.

import type {
  DeformParamsJson,
  DeformStatus,
  DragSpecJson,
  FlowPayload,
  MeshPayload,
  MeshSummary,
  MetricsPayload,
  StepPayload,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    if (!res.ok) await parseError(res);
    return (await res.json()) as T;
  }

  private async empty(path: string, init?: RequestInit): Promise<void> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    if (!res.ok) await parseError(res);
  }

  createSession(): Promise<{ id: string }> {
    return this.json("/sessions", { method: "POST" });
  }

  uploadDepth(sid: string, data: ArrayBuffer | Uint8Array): Promise<void> {
    const body = data instanceof Uint8Array
      ? data.slice().buffer as ArrayBuffer
      : data;
    return this.empty(`/sessions/${sid}/depth`, {
      method: "PUT",
      headers: { "content-type": "application/octet-stream" },
      body,
    });
  }

  requestMesh(
    sid: string,
    options: { tau_d?: number; tau_b?: number | "auto"; reduction?: number } | { import: string },
  ): Promise<MeshSummary> {
    return this.json(`/sessions/${sid}/mesh`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(options),
    });
  }

  fetchMesh(sid: string): Promise<MeshPayload> {
    return this.json(`/sessions/${sid}/mesh`);
  }

  putDragSpec(sid: string, spec: DragSpecJson): Promise<void> {
    return this.empty(`/sessions/${sid}/drag-spec`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(spec),
    });
  }

  fetchDragSpec(sid: string): Promise<DragSpecJson> {
    return this.json(`/sessions/${sid}/drag-spec`);
  }

  startDeform(sid: string, params: DeformParamsJson): Promise<{ job: string }> {
    return this.json(`/sessions/${sid}/deform`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(params),
    });
  }

  deformStatus(sid: string): Promise<DeformStatus> {
    return this.json(`/sessions/${sid}/deform/status`);
  }

  fetchStep(sid: string, k: number): Promise<StepPayload> {
    return this.json(`/sessions/${sid}/deform/steps/${k}`);
  }

  fetchFlow(
    sid: string,
    query: { strategy: string; count: number; grid: number },
  ): Promise<FlowPayload> {
    const params = new URLSearchParams({
      strategy: query.strategy,
      count: String(query.count),
      grid: String(query.grid),
    });
    return this.json(`/sessions/${sid}/flow?${params}`);
  }

  fetchMetrics(sid: string): Promise<MetricsPayload> {
    return this.json(`/sessions/${sid}/metrics`);
  }
}
