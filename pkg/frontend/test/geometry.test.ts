import { describe, expect, it } from "vitest";
import {
  eigen2x2,
  ellipseParams,
  fitView,
  plotArea,
  ticks,
  Transform,
} from "../src/geometry.js";
import { pendingPayload } from "./fixtures.js";

type Mat = [[number, number], [number, number]];

function matMul(a: Mat, b: Mat): Mat {
  return [
    [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
    [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
  ];
}

function rotation(angle: number): Mat {
  return [
    [Math.cos(angle), -Math.sin(angle)],
    [Math.sin(angle), Math.cos(angle)],
  ];
}

function transpose(m: Mat): Mat {
  return [
    [m[0][0], m[1][0]],
    [m[0][1], m[1][1]],
  ];
}

describe("eigen2x2", () => {
  const fixed: Mat = [[4, 1.2], [1.2, 1]];

  it("satisfies the eigenvector equation on the fixed covariance", () => {
    const { values, vectors } = eigen2x2(fixed);
    for (const i of [0, 1]) {
      const v = vectors[i];
      const mv = [
        fixed[0][0] * v[0] + fixed[0][1] * v[1],
        fixed[1][0] * v[0] + fixed[1][1] * v[1],
      ];
      expect(mv[0]).toBeCloseTo(values[i] * v[0], 10);
      expect(mv[1]).toBeCloseTo(values[i] * v[1], 10);
    }
    expect(values[0]).toBeGreaterThanOrEqual(values[1]);
    // orthonormal basis
    expect(Math.hypot(...vectors[0])).toBeCloseTo(1, 12);
    expect(vectors[0][0] * vectors[1][0] + vectors[0][1] * vectors[1][1]).toBeCloseTo(0, 12);
  });

  it("ellipse orientation reconstructs the covariance", () => {
    // oracle: R(angle) diag(rx^2, ry^2) R(angle)^T must reproduce the input,
    // which pins the angle to the eigen-decomposition up to symmetry
    const { rx, ry, angle } = ellipseParams(fixed);
    const rot = rotation(angle);
    const rebuilt = matMul(matMul(rot, [[rx * rx, 0], [0, ry * ry]]), transpose(rot));
    for (const i of [0, 1]) {
      for (const j of [0, 1]) {
        expect(rebuilt[i][j]).toBeCloseTo(fixed[i][j], 9);
      }
    }
  });

  it("handles axis-aligned covariances exactly", () => {
    expect(ellipseParams([[9, 0], [0, 1]])).toEqual({ rx: 3, ry: 1, angle: 0 });
    const tall = ellipseParams([[1, 0], [0, 9]]);
    expect(tall.rx).toBe(3);
    expect(tall.ry).toBe(1);
    expect(Math.abs(tall.angle)).toBeCloseTo(Math.PI / 2, 12);
  });

  it("puts the principal axis at 45 degrees for equal-diagonal positive coupling", () => {
    const { angle } = ellipseParams([[2, 1], [1, 2]]);
    expect(angle).toBeCloseTo(Math.PI / 4, 12);
  });
});

describe("fitView", () => {
  it("covers the window points and every 3-sigma box", () => {
    const pending = pendingPayload();
    const bounds = fitView(pending.window, pending.refined);
    for (const snap of pending.window) {
      for (const [x, y] of snap.points) {
        expect(x).toBeGreaterThanOrEqual(bounds.xMin);
        expect(x).toBeLessThanOrEqual(bounds.xMax);
        expect(y).toBeGreaterThanOrEqual(bounds.yMin);
        expect(y).toBeLessThanOrEqual(bounds.yMax);
      }
    }
    for (const comp of pending.refined.components) {
      expect(comp.mean[0] + 3 * Math.sqrt(comp.cov[0][0])).toBeLessThanOrEqual(bounds.xMax);
      expect(comp.mean[0] - 3 * Math.sqrt(comp.cov[0][0])).toBeGreaterThanOrEqual(bounds.xMin);
      expect(comp.mean[1] + 3 * Math.sqrt(comp.cov[1][1])).toBeLessThanOrEqual(bounds.yMax);
      expect(comp.mean[1] - 3 * Math.sqrt(comp.cov[1][1])).toBeGreaterThanOrEqual(bounds.yMin);
    }
  });

  it("falls back to the quality domain when there is nothing to fit", () => {
    expect(fitView([], null)).toEqual({ xMin: 0, xMax: 100, yMin: 0, yMax: 100 });
  });
});

describe("Transform", () => {
  it("round-trips data and pixel coordinates", () => {
    const t = new Transform(
      { xMin: 0, xMax: 100, yMin: 10, yMax: 90 },
      plotArea(640, 480),
    );
    for (const [x, y] of [[0, 10], [100, 90], [37.5, 42.1]] as const) {
      const [px, py] = t.toPixel(x, y);
      const [bx, by] = t.toData(px, py);
      expect(bx).toBeCloseTo(x, 9);
      expect(by).toBeCloseTo(y, 9);
    }
  });

  it("flips the y axis", () => {
    const t = new Transform(
      { xMin: 0, xMax: 1, yMin: 0, yMax: 1 },
      plotArea(640, 480),
    );
    const [, low] = t.toPixel(0, 0);
    const [, high] = t.toPixel(0, 1);
    expect(low).toBeGreaterThan(high);
  });
});

describe("ticks", () => {
  it("stays inside the range with a round step", () => {
    const got = ticks(0, 100);
    expect(got[0]).toBeGreaterThanOrEqual(0);
    expect(got[got.length - 1]).toBeLessThanOrEqual(100 + 1e-9);
    expect(got).toContain(0);
    expect(got.length).toBeGreaterThanOrEqual(4);
    expect(got.length).toBeLessThanOrEqual(11);
  });
});
