import type { ConsoleApi, EventSourceLike } from "./api.js";
import type { Transform } from "./geometry.js";
import {
  applyRank,
  dragToBox,
  initialState,
  isPermutation,
  newRanking,
  rankingComplete,
  rankingOrder,
  type Tool,
  type ViewState,
} from "./state.js";
import type { BoxResponse, PendingRequest, RunState, ServerEvent } from "./types.js";

const MIN_DRAG_PX = 3;

/**
 * Single source of truth for the console.  Every mutation round-trips through
 * the service; the controller only stages a drag rectangle and the ranking
 * steps locally, then posts and re-reads.  `notify` fires after every state
 * change so the host can repaint.
 */
export class ConsoleController {
  readonly state: ViewState = initialState();
  private source: EventSourceLike | null = null;

  constructor(
    private readonly api: ConsoleApi,
    private readonly notify: (state: ViewState) => void,
    private readonly transform: () => Transform,
  ) {}

  async start(): Promise<void> {
    await this.refreshState();
    await this.refreshPending();
    this.source = this.api.openEvents((ev) => void this.handleEvent(ev));
    this.notify(this.state);
  }

  stop(): void {
    this.source?.close();
    this.source = null;
  }

  // ----- server reads ------------------------------------------------------

  async refreshState(): Promise<void> {
    this.state.run = await this.api.getState();
    this.notify(this.state);
  }

  async refreshPending(): Promise<void> {
    const pending = await this.api.getPending();
    const previousId = this.state.pending?.request_id;
    this.state.pending = pending;
    if (pending?.request_id !== previousId) {
      // a different request (or none) invalidates every local edit
      this.state.stagedBox = null;
      this.state.drag = null;
      this.state.ranking = null;
      this.state.message = null;
      this.state.panX = 0;
      this.state.panY = 0;
    }
    this.notify(this.state);
  }

  private async handleEvent(ev: ServerEvent): Promise<void> {
    if (ev.kind === "cycle_completed") {
      const cycle = (ev.data as { cycle?: number }).cycle;
      if (this.state.run && typeof cycle === "number") {
        this.state.run.cycle = cycle;
        this.notify(this.state);
      }
      return;
    }
    if (ev.kind === "new_class_detected" || ev.kind === "feedback_applied") {
      await this.refreshState();
      await this.refreshPending();
    }
  }

  // ----- tools and pointer -------------------------------------------------

  setTool(tool: Tool): void {
    this.state.tool = tool;
    this.state.drag = null;
    this.notify(this.state);
  }

  pointerDown(px: number, py: number): void {
    this.state.drag = { x0: px, y0: py, x1: px, y1: py };
    this.notify(this.state);
  }

  pointerMove(px: number, py: number): void {
    const drag = this.state.drag;
    if (!drag) return;
    if (this.state.tool === "pan") {
      const t = this.transform();
      const [ax, ay] = t.toData(drag.x1, drag.y1);
      const [bx, by] = t.toData(px, py);
      this.state.panX -= bx - ax;
      this.state.panY -= by - ay;
    }
    drag.x1 = px;
    drag.y1 = py;
    this.notify(this.state);
  }

  pointerUp(): void {
    const drag = this.state.drag;
    this.state.drag = null;
    if (!drag) return;
    if (
      this.state.tool === "box" &&
      this.state.pending &&
      Math.abs(drag.x1 - drag.x0) >= MIN_DRAG_PX &&
      Math.abs(drag.y1 - drag.y0) >= MIN_DRAG_PX
    ) {
      this.state.stagedBox = dragToBox(drag, (x, y) => this.transform().toData(x, y));
    }
    this.notify(this.state);
  }

  // ----- feedback ----------------------------------------------------------

  async applyFeedback(): Promise<void> {
    const pending = this.state.pending;
    if (!pending || this.state.busy) return;
    if (!this.state.stagedBox) {
      // nothing drawn: the proposal stands as-is and the eventual answer
      // carries no boxes, so there is nothing to post
      this.state.message = "no box drawn; proposal accepted as-is";
      this.notify(this.state);
      return;
    }
    this.state.busy = true;
    this.notify(this.state);
    try {
      const res = await this.api.postBox(pending.request_id, this.state.stagedBox);
      if (res.status === 200) {
        const body = res.body as BoxResponse;
        pending.boxes = [...pending.boxes, this.state.stagedBox];
        pending.refined = body.model;
        pending.refined_class_ids = body.class_ids;
        this.state.stagedBox = null;
        this.state.ranking = null;
        this.state.message = null;
      } else if (res.status === 422) {
        this.state.message = detailOf(res.body);
      } else {
        this.state.message = detailOf(res.body);
        await this.refreshPending();
      }
    } finally {
      this.state.busy = false;
      this.notify(this.state);
    }
  }

  // ----- ranking -----------------------------------------------------------

  startRanking(): void {
    const pending = this.state.pending;
    if (!pending) return;
    this.state.ranking = newRanking(pending.refined_class_ids);
    this.state.message = null;
    this.notify(this.state);
  }

  async applyRanking(rank: number): Promise<void> {
    const pending = this.state.pending;
    const ranking = this.state.ranking;
    if (!pending || !ranking || this.state.busy) return;
    const step = applyRank(ranking, rank);
    if (!step.ok) {
      this.state.message = step.error ?? "invalid rank";
      this.notify(this.state);
      return;
    }
    this.state.message = null;
    this.notify(this.state);
    if (!rankingComplete(ranking)) return;

    const order = rankingOrder(ranking);
    if (!isPermutation(order, pending.refined_class_ids)) {
      this.state.message = "ranking is not a permutation of the classes";
      this.notify(this.state);
      return;
    }
    this.state.busy = true;
    this.notify(this.state);
    let outcome: string;
    try {
      const res = await this.api.postRanking(pending.request_id, order);
      outcome = res.status === 200
        ? `ranking ${order.join(" > ")} submitted`
        : detailOf(res.body);
    } finally {
      this.state.busy = false;
    }
    // the next 204 from the pending endpoint clears the banner
    await this.refreshPending();
    this.state.message = outcome;
    this.notify(this.state);
  }
}

function detailOf(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    return String((body as { detail: unknown }).detail);
  }
  return "request failed";
}

export type { RunState, PendingRequest, ViewState };
