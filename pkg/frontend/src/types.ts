// Wire types mirroring the service JSON schemas.

export interface DragArrow {
  handle: [number, number];
  target: [number, number];
}

export interface DragSpecJson {
  drags: { handle: [number, number]; target: [number, number] }[];
  mask: string; // inline RLE or a server-side path
}

export interface DeformParamsJson {
  alpha: number;
  beta: number;
  lambda: number;
  steps: number;
  max_lg_iters?: number;
  rel_tol?: number;
  weight_mode?: "cotangent" | "uniform";
}

export interface MeshSummary {
  vertices: number;
  faces: number;
}

export interface MeshPayload {
  vertices: number[][];
  faces: number[][];
  projection: number[][] | null;
  image_size: [number, number] | null;
}

export interface DeformStatus {
  status: "idle" | "deforming" | "done" | "error";
  step_k: number;
  K: number;
  energy: number | null;
  error: string | null;
}

export interface StepPayload {
  vertices: number[][];
  energy: number;
}

export interface FlowVector {
  x: number;
  y: number;
  dx: number;
  dy: number;
}

export interface FlowPayload {
  grid_n: number;
  strategy: "magnitude" | "uniform";
  vectors: FlowVector[];
}

export interface MetricsPayload {
  melr: number;
  m_arap_error: number;
  faces: number;
  movable_edges: number;
}

export interface OverlayToggles {
  wireframe: boolean;
  flow: boolean;
  sampled: boolean;
}
