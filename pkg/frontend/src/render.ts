// 2D canvas drawing. Depth meshes carry pixel-frame coordinates, so the x/y
// of each served vertex already live in image space; everything here is
// canvas transforms only.

import type { FlowPayload, MeshPayload, OverlayToggles, StepPayload } from "./types.js";
import type { DragArrow } from "./types.js";

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function fitView(imageW: number, imageH: number, canvasW: number, canvasH: number): ViewTransform {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

export function toCanvas(view: ViewTransform, x: number, y: number): [number, number] {
  return [view.offsetX + x * view.scale, view.offsetY + y * view.scale];
}

export function toImage(view: ViewTransform, cx: number, cy: number): [number, number] {
  return [(cx - view.offsetX) / view.scale, (cy - view.offsetY) / view.scale];
}

export function drawWireframe(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  mesh: MeshPayload,
  step: StepPayload,
  color = "#4a90d9",
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 0.6;
  ctx.beginPath();
  for (const [a, b, c] of mesh.faces) {
    const pa = toCanvas(view, step.vertices[a][0], step.vertices[a][1]);
    const pb = toCanvas(view, step.vertices[b][0], step.vertices[b][1]);
    const pc = toCanvas(view, step.vertices[c][0], step.vertices[c][1]);
    ctx.moveTo(pa[0], pa[1]);
    ctx.lineTo(pb[0], pb[1]);
    ctx.lineTo(pc[0], pc[1]);
    ctx.closePath();
  }
  ctx.stroke();
}

export function drawArrow(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  arrow: DragArrow,
  color = "#e0342f",
): void {
  const [hx, hy] = toCanvas(view, arrow.handle[0], arrow.handle[1]);
  const [tx, ty] = toCanvas(view, arrow.target[0], arrow.target[1]);
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(hx, hy);
  ctx.lineTo(tx, ty);
  ctx.stroke();
  const angle = Math.atan2(ty - hy, tx - hx);
  ctx.beginPath();
  ctx.moveTo(tx, ty);
  ctx.lineTo(tx - 9 * Math.cos(angle - 0.4), ty - 9 * Math.sin(angle - 0.4));
  ctx.lineTo(tx - 9 * Math.cos(angle + 0.4), ty - 9 * Math.sin(angle + 0.4));
  ctx.closePath();
  ctx.fill();
  ctx.beginPath();
  ctx.arc(hx, hy, 3.5, 0, 2 * Math.PI);
  ctx.fill();
}

export function drawFlow(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  flow: FlowPayload,
  color = "#08a045",
): void {
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = 1.2;
  for (const v of flow.vectors) {
    const [x0, y0] = toCanvas(view, v.x, v.y);
    const [x1, y1] = toCanvas(view, v.x + v.dx, v.y + v.dy);
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(x0, y0, 1.6, 0, 2 * Math.PI);
    ctx.fill();
  }
}

export function drawMask(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  mask: Uint8Array,
  width: number,
  height: number,
): void {
  ctx.fillStyle = "rgba(255, 210, 40, 0.25)";
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (mask[y * width + x]) {
        const [cx, cy] = toCanvas(view, x, y);
        ctx.fillRect(cx, cy, view.scale, view.scale);
      }
    }
  }
}

export function drawFrame(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  depthImage: CanvasImageSource | null,
  mesh: MeshPayload | null,
  step: StepPayload | null,
  flow: FlowPayload | null,
  arrows: DragArrow[],
  mask: { data: Uint8Array; width: number; height: number } | null,
  overlays: OverlayToggles,
): void {
  const canvas = ctx.canvas;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (depthImage) {
    const w = (mask?.width ?? 0) * view.scale;
    const h = (mask?.height ?? 0) * view.scale;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(depthImage, view.offsetX, view.offsetY, w, h);
  }
  if (mask && overlays.wireframe) {
    drawMask(ctx, view, mask.data, mask.width, mask.height);
  }
  if (mesh && step && overlays.wireframe) {
    drawWireframe(ctx, view, mesh, step);
  }
  if (flow && overlays.flow) {
    drawFlow(ctx, view, flow);
  }
  for (const arrow of arrows) {
    drawArrow(ctx, view, arrow);
  }
}
