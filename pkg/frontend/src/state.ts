import type { BoxDict, PendingRequest, RunState } from "./types.js";

export type Tool = "pan" | "box";

/** In-progress pointer drag, pixel coordinates. */
export interface DragRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/**
 * Stepwise ranking: ranks are handed out one class at a time and exactly one
 * unranked class is highlighted until the order is total.
 */
export interface RankingState {
  classIds: number[];
  /** class id -> 1-based rank */
  assigned: Map<number, number>;
  current: number | null;
}

export interface ViewState {
  run: RunState | null;
  pending: PendingRequest | null;
  tool: Tool;
  drag: DragRect | null;
  /** Completed drag in data coordinates, waiting for Apply Feedback. */
  stagedBox: BoxDict | null;
  /** Pan offset in data units, reset whenever a new request arrives. */
  panX: number;
  panY: number;
  ranking: RankingState | null;
  message: string | null;
  busy: boolean;
}

export function initialState(): ViewState {
  return {
    run: null,
    pending: null,
    tool: "pan",
    drag: null,
    stagedBox: null,
    panX: 0,
    panY: 0,
    ranking: null,
    message: null,
    busy: false,
  };
}

/** Drag rectangle to an axis-ordered box, in data coordinates. */
export function dragToBox(
  drag: DragRect,
  toData: (px: number, py: number) => [number, number],
): BoxDict {
  const [ax, ay] = toData(drag.x0, drag.y0);
  const [bx, by] = toData(drag.x1, drag.y1);
  return {
    x_min: Math.min(ax, bx),
    x_max: Math.max(ax, bx),
    y_min: Math.min(ay, by),
    y_max: Math.max(ay, by),
  };
}

export function newRanking(classIds: number[]): RankingState {
  const ids = [...classIds].sort((a, b) => a - b);
  return { classIds: ids, assigned: new Map(), current: ids[0] ?? null };
}

function nextUnranked(state: RankingState): number | null {
  for (const id of state.classIds) {
    if (!state.assigned.has(id)) return id;
  }
  return null;
}

export interface RankStep {
  ok: boolean;
  error?: string;
}

/**
 * Assign `rank` to the highlighted class and advance the highlight.  A rank
 * outside 1..n, a non-integer, or one already taken is refused.
 */
export function applyRank(state: RankingState, rank: number): RankStep {
  if (state.current === null) return { ok: false, error: "ranking already complete" };
  const n = state.classIds.length;
  if (!Number.isInteger(rank) || rank < 1 || rank > n) {
    return { ok: false, error: `rank must be an integer in 1..${n}` };
  }
  for (const [id, taken] of state.assigned) {
    if (taken === rank) {
      return { ok: false, error: `rank ${rank} is already assigned to class ${id}` };
    }
  }
  state.assigned.set(state.current, rank);
  state.current = nextUnranked(state);
  return { ok: true };
}

export function rankingComplete(state: RankingState): boolean {
  return state.current === null && state.assigned.size === state.classIds.length;
}

/** Class ids by ascending rank; only meaningful once the ranking is complete. */
export function rankingOrder(state: RankingState): number[] {
  return [...state.assigned.entries()]
    .sort((a, b) => a[1] - b[1])
    .map(([id]) => id);
}

/** Client-side permutation guard before anything is posted. */
export function isPermutation(order: number[], classIds: number[]): boolean {
  if (order.length !== classIds.length) return false;
  const want = new Set(classIds);
  const seen = new Set<number>();
  for (const id of order) {
    if (!want.has(id) || seen.has(id)) return false;
    seen.add(id);
  }
  return true;
}
