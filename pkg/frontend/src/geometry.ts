import type { ComponentDict, ModelDict, WindowSnapshot } from "./types.js";

/** Ellipse parameters for one covariance: semi-axes at 1 sigma plus rotation. */
export interface EllipseParams {
  /** Semi-axis along the principal eigenvector, sqrt of the larger eigenvalue. */
  rx: number;
  /** Semi-axis along the minor eigenvector. */
  ry: number;
  /** Rotation of the principal eigenvector, radians in (-pi, pi]. */
  angle: number;
}

export interface EigenPair {
  values: [number, number];
  /** Unit eigenvectors as columns, first one for values[0]. */
  vectors: [[number, number], [number, number]];
}

/** Analytic eigen-decomposition of a symmetric 2x2 matrix, larger value first. */
export function eigen2x2(m: [[number, number], [number, number]]): EigenPair {
  const a = m[0][0];
  const b = (m[0][1] + m[1][0]) / 2;
  const c = m[1][1];
  const half = (a + c) / 2;
  const gap = Math.sqrt(((a - c) / 2) ** 2 + b * b);
  const l1 = half + gap;
  const l2 = half - gap;
  let v1: [number, number];
  if (Math.abs(b) > 1e-12) {
    v1 = [l1 - c, b];
  } else {
    // already diagonal; the larger entry owns the principal axis
    v1 = a >= c ? [1, 0] : [0, 1];
  }
  const n = Math.hypot(v1[0], v1[1]);
  v1 = [v1[0] / n, v1[1] / n];
  const v2: [number, number] = [-v1[1], v1[0]];
  return { values: [l1, l2], vectors: [v1, v2] };
}

export function ellipseParams(cov: [[number, number], [number, number]]): EllipseParams {
  const { values, vectors } = eigen2x2(cov);
  return {
    rx: Math.sqrt(Math.max(values[0], 0)),
    ry: Math.sqrt(Math.max(values[1], 0)),
    angle: Math.atan2(vectors[0][1], vectors[0][0]),
  };
}

export interface ViewBounds {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

const MARGIN_FRACTION = 0.06;

/** Data ranges covering the window points and every component's 3-sigma box. */
export function fitView(window: WindowSnapshot[], model: ModelDict | null): ViewBounds {
  let xMin = Infinity;
  let xMax = -Infinity;
  let yMin = Infinity;
  let yMax = -Infinity;
  const take = (x: number, y: number) => {
    xMin = Math.min(xMin, x);
    xMax = Math.max(xMax, x);
    yMin = Math.min(yMin, y);
    yMax = Math.max(yMax, y);
  };
  for (const snap of window) {
    for (const [x, y] of snap.points) take(x, y);
  }
  for (const comp of model?.components ?? []) {
    // the axis-aligned bounding box of the 3-sigma ellipse is
    // mean +- 3*sqrt(diagonal)
    const dx = 3 * Math.sqrt(Math.max(comp.cov[0][0], 0));
    const dy = 3 * Math.sqrt(Math.max(comp.cov[1][1], 0));
    take(comp.mean[0] - dx, comp.mean[1] - dy);
    take(comp.mean[0] + dx, comp.mean[1] + dy);
  }
  if (!Number.isFinite(xMin)) return { xMin: 0, xMax: 100, yMin: 0, yMax: 100 };
  if (xMax - xMin < 1e-9) {
    xMin -= 1;
    xMax += 1;
  }
  if (yMax - yMin < 1e-9) {
    yMin -= 1;
    yMax += 1;
  }
  const mx = (xMax - xMin) * MARGIN_FRACTION;
  const my = (yMax - yMin) * MARGIN_FRACTION;
  return { xMin: xMin - mx, xMax: xMax + mx, yMin: yMin - my, yMax: yMax + my };
}

/** Plot area inside the canvas, leaving room for axis labels. */
export interface PlotArea {
  left: number;
  top: number;
  width: number;
  height: number;
}

export function plotArea(canvasWidth: number, canvasHeight: number): PlotArea {
  return {
    left: 48,
    top: 12,
    width: Math.max(canvasWidth - 48 - 14, 10),
    height: Math.max(canvasHeight - 12 - 34, 10),
  };
}

/** Affine data-to-pixel mapping (y axis flipped). */
export class Transform {
  constructor(readonly bounds: ViewBounds, readonly area: PlotArea) {}

  toPixel(x: number, y: number): [number, number] {
    const { bounds, area } = this;
    const px = area.left + ((x - bounds.xMin) / (bounds.xMax - bounds.xMin)) * area.width;
    const py = area.top + ((bounds.yMax - y) / (bounds.yMax - bounds.yMin)) * area.height;
    return [px, py];
  }

  toData(px: number, py: number): [number, number] {
    const { bounds, area } = this;
    const x = bounds.xMin + ((px - area.left) / area.width) * (bounds.xMax - bounds.xMin);
    const y = bounds.yMax - ((py - area.top) / area.height) * (bounds.yMax - bounds.yMin);
    return [x, y];
  }

  /** Pixels per data unit, separate per axis. */
  scale(): [number, number] {
    const { bounds, area } = this;
    return [
      area.width / (bounds.xMax - bounds.xMin),
      area.height / (bounds.yMax - bounds.yMin),
    ];
  }
}

/** Round tick step hitting roughly `target` ticks across `span`. */
export function tickStep(span: number, target = 5): number {
  const raw = span / target;
  const mag = 10 ** Math.floor(Math.log10(raw));
  for (const mult of [1, 2, 5]) {
    if (raw <= mult * mag) return mult * mag;
  }
  return 10 * mag;
}

export function ticks(min: number, max: number, target = 5): number[] {
  const step = tickStep(max - min, target);
  const out: number[] = [];
  for (let v = Math.ceil(min / step) * step; v <= max + 1e-9; v += step) {
    out.push(Math.abs(v) < step * 1e-6 ? 0 : v);
  }
  return out;
}

/** Ellipse component params in data space for every sigma ring. */
export function componentRings(comp: ComponentDict, sigmas: number[]): EllipseParams[] {
  const base = ellipseParams(comp.cov);
  return sigmas.map((s) => ({ rx: base.rx * s, ry: base.ry * s, angle: base.angle }));
}
