import { componentRings, fitView, plotArea, ticks, Transform } from "./geometry.js";
import type { ViewState } from "./state.js";
import type { ModelDict } from "./types.js";

/**
 * The slice of CanvasRenderingContext2D the renderer touches.  Tests drive it
 * with a recording double; main.ts passes the real context.
 */
export interface Canvas2DLike {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
  font: string;
  textAlign: string;
  textBaseline: string;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  scale(x: number, y: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  ellipse(
    x: number, y: number, rx: number, ry: number,
    rotation: number, a0: number, a1: number,
  ): void;
  rect(x: number, y: number, w: number, h: number): void;
  stroke(): void;
  fill(): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
}

export const SIGMA_RINGS = [1, 2, 3];

const POINT_COLORS = ["#1b4965", "#5a8f29", "#7d5ba6", "#b8860b", "#0f7173", "#84596b"];
const BASE_CLASS_STROKE = "#1b1b1b";
const NEW_CLASS_STROKE = "#c0392b";

function pointColor(classId: number): string {
  if (classId < 0) return "#999999";
  return POINT_COLORS[classId % POINT_COLORS.length];
}

/** Data-to-pixel transform for the current view, pan offset applied. */
export function viewTransform(state: ViewState, width: number, height: number): Transform {
  const pending = state.pending;
  const bounds = fitView(pending?.window ?? [], pending?.refined ?? null);
  return new Transform(
    {
      xMin: bounds.xMin + state.panX,
      xMax: bounds.xMax + state.panX,
      yMin: bounds.yMin + state.panY,
      yMax: bounds.yMax + state.panY,
    },
    plotArea(width, height),
  );
}

function drawAxes(ctx: Canvas2DLike, t: Transform): void {
  const { area, bounds } = t;
  ctx.strokeStyle = "#888888";
  ctx.lineWidth = 1;
  ctx.strokeRect(area.left, area.top, area.width, area.height);
  ctx.fillStyle = "#444444";
  ctx.font = "11px system-ui, sans-serif";
  ctx.textAlign = "center";
  ctx.textBaseline = "top";
  for (const v of ticks(bounds.xMin, bounds.xMax)) {
    const [px] = t.toPixel(v, bounds.yMin);
    ctx.beginPath();
    ctx.moveTo(px, area.top + area.height);
    ctx.lineTo(px, area.top + area.height + 4);
    ctx.stroke();
    ctx.fillText(formatTick(v), px, area.top + area.height + 6);
  }
  ctx.textAlign = "right";
  ctx.textBaseline = "middle";
  for (const v of ticks(bounds.yMin, bounds.yMax)) {
    const [, py] = t.toPixel(bounds.xMin, v);
    ctx.beginPath();
    ctx.moveTo(area.left - 4, py);
    ctx.lineTo(area.left, py);
    ctx.stroke();
    ctx.fillText(formatTick(v), area.left - 6, py);
  }
  ctx.textAlign = "center";
  ctx.textBaseline = "bottom";
  ctx.fillText("packet loss (%)", area.left + area.width / 2, area.top + area.height + 32);
  ctx.textAlign = "left";
  ctx.textBaseline = "bottom";
  ctx.fillText("energy (mC)", 4, area.top - 2);
}

function formatTick(v: number): string {
  const rounded = Math.round(v * 100) / 100;
  return String(rounded);
}

function drawPoints(ctx: Canvas2DLike, t: Transform, state: ViewState, dimOthers: number | null): void {
  const pending = state.pending;
  if (!pending) return;
  for (const snap of pending.window) {
    snap.points.forEach((pt, i) => {
      const cls = snap.class_ids[i];
      const [px, py] = t.toPixel(pt[0], pt[1]);
      ctx.globalAlpha = dimOthers !== null && cls !== dimOthers ? 0.25 : 0.85;
      ctx.fillStyle = pointColor(cls);
      ctx.beginPath();
      ctx.arc(px, py, 2.5, 0, Math.PI * 2);
      ctx.fill();
    });
  }
  ctx.globalAlpha = 1;
}

function drawModel(
  ctx: Canvas2DLike,
  t: Transform,
  model: ModelDict,
  newClassIds: number[],
  highlight: number | null,
): void {
  const [sx, sy] = t.scale();
  const fresh = new Set(newClassIds);
  for (const comp of model.components) {
    const isNew = fresh.has(comp.class_id);
    const isCurrent = highlight !== null && comp.class_id === highlight;
    ctx.globalAlpha = highlight !== null && !isCurrent ? 0.25 : 1;
    ctx.strokeStyle = isNew ? NEW_CLASS_STROKE : BASE_CLASS_STROKE;
    ctx.lineWidth = isCurrent ? 2.5 : 1.2;
    const [cx, cy] = t.toPixel(comp.mean[0], comp.mean[1]);
    for (const ring of componentRings(comp, SIGMA_RINGS)) {
      ctx.save();
      ctx.translate(cx, cy);
      // anisotropic pixel scale: build the path in data units so the
      // rotation stays the eigenvector angle
      ctx.scale(sx, -sy);
      ctx.beginPath();
      ctx.ellipse(0, 0, ring.rx, ring.ry, ring.angle, 0, Math.PI * 2);
      ctx.restore();
      ctx.stroke();
    }
    ctx.fillStyle = ctx.strokeStyle;
    ctx.beginPath();
    ctx.arc(cx, cy, 3, 0, Math.PI * 2);
    ctx.fill();
  }
  ctx.globalAlpha = 1;
}

function drawBoxes(ctx: Canvas2DLike, t: Transform, state: ViewState): void {
  const pending = state.pending;
  ctx.strokeStyle = "#1b4965";
  ctx.lineWidth = 1;
  for (const box of pending?.boxes ?? []) {
    const [x0, y0] = t.toPixel(box.x_min, box.y_max);
    const [x1, y1] = t.toPixel(box.x_max, box.y_min);
    ctx.setLineDash([]);
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
  }
  if (state.stagedBox) {
    const [x0, y0] = t.toPixel(state.stagedBox.x_min, state.stagedBox.y_max);
    const [x1, y1] = t.toPixel(state.stagedBox.x_max, state.stagedBox.y_min);
    ctx.setLineDash([6, 3]);
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
    ctx.setLineDash([]);
  }
  if (state.drag) {
    ctx.setLineDash([3, 3]);
    ctx.strokeStyle = "#666666";
    ctx.strokeRect(
      Math.min(state.drag.x0, state.drag.x1),
      Math.min(state.drag.y0, state.drag.y1),
      Math.abs(state.drag.x1 - state.drag.x0),
      Math.abs(state.drag.y1 - state.drag.y0),
    );
    ctx.setLineDash([]);
  }
}

/** Full repaint; the refined model is what gets drawn once box edits exist. */
export function render(ctx: Canvas2DLike, width: number, height: number, state: ViewState): Transform {
  const t = viewTransform(state, width, height);
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, width, height);
  drawAxes(ctx, t);
  const highlight = state.ranking?.current ?? null;
  drawPoints(ctx, t, state, highlight);
  const pending = state.pending;
  if (pending) {
    // base classes keep their ids through refits, so anything else is new
    const baseIds = new Set(
      pending.model.components
        .map((c) => c.class_id)
        .filter((id) => !pending.new_class_ids.includes(id)),
    );
    const newIds = pending.refined_class_ids.filter((id) => !baseIds.has(id));
    drawModel(ctx, t, pending.refined, newIds, highlight);
  }
  drawBoxes(ctx, t, state);
  return t;
}
