// Editor state: arrows, mask strokes, parameter panel, playback cursor.
// Client-side validation mirrors the deformation parameter invariants so a
// bad submission never leaves the browser.

import { maskToRle } from "./rle.js";
import type { DeformParamsJson, DragArrow, DragSpecJson, OverlayToggles } from "./types.js";

export const PARAM_PRESETS = {
  alpha: [0.2, 0.3, 0.4],
  beta: 0.8,
  count: 10,
} as const;

export interface ParamPanel {
  alpha: number;
  beta: number;
  lambda: number;
  steps: number;
  grid: number;
  count: number;
  strategy: "magnitude" | "uniform";
}

export function defaultParams(): ParamPanel {
  return {
    alpha: 0.3,
    beta: PARAM_PRESETS.beta,
    lambda: 0.5,
    steps: 10,
    grid: 20,
    count: PARAM_PRESETS.count,
    strategy: "magnitude",
  };
}

export function validateParams(p: ParamPanel): string[] {
  const problems: string[] = [];
  if (!(p.lambda > 0 && p.lambda <= 1)) problems.push("lambda must be in (0, 1]");
  if (!(Number.isInteger(p.steps) && p.steps >= 1)) problems.push("steps K must be >= 1");
  if (p.alpha < 0) problems.push("alpha must be non-negative");
  if (p.beta < 0) problems.push("beta must be non-negative");
  if (!(Number.isInteger(p.grid) && p.grid >= 1)) problems.push("grid N must be >= 1");
  if (!(Number.isInteger(p.count) && p.count >= 1)) problems.push("count must be >= 1");
  return problems;
}

export class EditorState {
  sessionId: string | null = null;
  imageWidth = 0;
  imageHeight = 0;
  arrows: DragArrow[] = [];
  mask: Uint8Array = new Uint8Array(0);
  params: ParamPanel = defaultParams();
  cursor = 0; // playback position 0..K
  totalSteps = 0;
  overlays: OverlayToggles = { wireframe: true, flow: true, sampled: true };

  setImage(width: number, height: number): void {
    this.imageWidth = width;
    this.imageHeight = height;
    this.mask = new Uint8Array(width * height);
    this.arrows = [];
    this.cursor = 0;
    this.totalSteps = 0;
  }

  addArrow(handle: [number, number], target: [number, number]): void {
    const inBounds = (p: [number, number]) =>
      p[0] >= 0 && p[0] <= this.imageWidth - 1 && p[1] >= 0 && p[1] <= this.imageHeight - 1;
    if (!inBounds(handle) || !inBounds(target)) {
      throw new Error("arrow endpoints must stay inside the image");
    }
    this.arrows.push({ handle, target });
  }

  clearArrows(): void {
    this.arrows = [];
  }

  /** Paint a filled disc of editable pixels (the mask brush). */
  brush(cx: number, cy: number, radius: number, value = 1): void {
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.imageWidth - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.imageHeight - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2) {
          this.mask[y * this.imageWidth + x] = value;
        }
      }
    }
  }

  fillMask(): void {
    this.mask.fill(1);
  }

  maskIsEmpty(): boolean {
    return !this.mask.some((v) => v !== 0);
  }

  /** Serialize exactly to the drag-spec wire schema. */
  toDragSpec(): DragSpecJson {
    if (this.arrows.length === 0) {
      throw new Error("draw at least one drag arrow");
    }
    if (this.maskIsEmpty()) {
      throw new Error("paint an editable region first");
    }
    return {
      drags: this.arrows.map((a) => ({
        handle: [a.handle[0], a.handle[1]],
        target: [a.target[0], a.target[1]],
      })),
      mask: maskToRle(this.mask, this.imageWidth, this.imageHeight),
    };
  }

  deformParams(): DeformParamsJson {
    const problems = validateParams(this.params);
    if (problems.length) {
      throw new Error(problems.join("; "));
    }
    return {
      alpha: this.params.alpha,
      beta: this.params.beta,
      lambda: this.params.lambda,
      steps: this.params.steps,
    };
  }

  setCursor(k: number): void {
    this.cursor = Math.max(0, Math.min(this.totalSteps, Math.round(k)));
  }
}
