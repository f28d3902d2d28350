import type { EventSourceLike, FetchLike, MessageLike, ResponseLike } from "../src/api.js";
import type { BoxDict, ModelDict, PendingRequest, RunState } from "../src/types.js";

export function component(
  mean: [number, number],
  cov: [[number, number], [number, number]],
  classId: number,
  weight = 0.5,
): ModelDict["components"][number] {
  return { mean, cov, weight, support_count: 40, class_id: classId };
}

/** One base class plus one proposed new class, the usual detection shape. */
export function proposalModel(): ModelDict {
  return {
    components: [
      component([20, 20], [[4, 0], [0, 4]], 0),
      component([70, 60], [[4, 1.2], [1.2, 1]], 1),
    ],
    outlier_threshold: 0.001,
  };
}

/** The same proposal after a box split: the new class re-fit as two. */
export function refinedAfterBox(): ModelDict {
  return {
    components: [
      component([20, 20], [[4, 0], [0, 4]], 0),
      component([66, 58], [[2, 0.4], [0.4, 1]], 2, 0.25),
      component([74, 62], [[2, -0.3], [-0.3, 1]], 3, 0.25),
    ],
    outlier_threshold: 0.001,
  };
}

export function pendingPayload(): PendingRequest {
  return {
    request_id: 7,
    model: proposalModel(),
    window: [
      {
        cycle: 150,
        option_ids: [11, 12, 13],
        points: [[19, 21], [69, 59], [71, 61]],
        class_ids: [0, 1, 1],
        memberships: [0.9, 0.7, 0.6],
      },
    ],
    new_class_ids: [1],
    status: "pending",
    boxes: [],
    refined: proposalModel(),
    refined_class_ids: [0, 1],
  };
}

export function runState(): RunState {
  return {
    status: "running",
    approach: "lsa_feedback",
    cell: "plec_b-r-g_fb",
    error: null,
    pending_request_id: 7,
    events: 3,
    cycle: 150,
  };
}

function jsonResponse(status: number, body?: unknown): ResponseLike {
  return {
    status,
    json: () =>
      body === undefined
        ? Promise.reject(new Error("no body"))
        : Promise.resolve(body),
  };
}

export class FakeEventSource implements EventSourceLike {
  listeners = new Map<string, ((ev: MessageLike) => void)[]>();
  closed = false;
  private seq = 0;

  addEventListener(type: string, listener: (ev: MessageLike) => void): void {
    const list = this.listeners.get(type) ?? [];
    list.push(listener);
    this.listeners.set(type, list);
  }

  close(): void {
    this.closed = true;
  }

  emit(kind: string, data: Record<string, unknown>): void {
    this.seq += 1;
    const frame = JSON.stringify({ seq: this.seq, kind, data });
    for (const listener of this.listeners.get(kind) ?? []) {
      listener({ data: frame });
    }
  }
}

/**
 * In-memory stand-in for the operator service: scripted responses, recorded
 * mutations, and the same status codes the real endpoints produce.
 */
export class ScriptedService {
  run: RunState | null = runState();
  pending: PendingRequest | null = pendingPayload();
  boxPosts: { url: string; body: BoxDict }[] = [];
  rankingPosts: { url: string; body: { ranking: number[] } }[] = [];
  /** Next box POST fails with this status when set. */
  nextBoxStatus: number | null = null;
  nextBoxDetail = "box selects no new-class points";
  events = new FakeEventSource();

  readonly fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    if (url.endsWith("/api/run/state")) {
      return this.run
        ? jsonResponse(200, this.run)
        : jsonResponse(404, { detail: "no run yet" });
    }
    if (url.endsWith("/api/feedback/pending")) {
      return this.pending ? jsonResponse(200, this.pending) : jsonResponse(204);
    }
    const boxMatch = url.match(/\/api\/feedback\/(\d+)\/box$/);
    if (boxMatch && method === "POST") {
      const body = JSON.parse(init?.body ?? "{}") as BoxDict;
      this.boxPosts.push({ url, body });
      if (this.nextBoxStatus !== null) {
        const status = this.nextBoxStatus;
        this.nextBoxStatus = null;
        return jsonResponse(status, { detail: this.nextBoxDetail });
      }
      if (!this.pending || Number(boxMatch[1]) !== this.pending.request_id) {
        return jsonResponse(409, { detail: "not pending" });
      }
      const refined = refinedAfterBox();
      this.pending.boxes = [...this.pending.boxes, body];
      this.pending.refined = refined;
      this.pending.refined_class_ids = refined.components.map((c) => c.class_id);
      return jsonResponse(200, {
        request_id: this.pending.request_id,
        boxes: this.pending.boxes.length,
        model: refined,
        class_ids: this.pending.refined_class_ids,
      });
    }
    const rankMatch = url.match(/\/api\/feedback\/(\d+)\/ranking$/);
    if (rankMatch && method === "POST") {
      const body = JSON.parse(init?.body ?? "{}") as { ranking: number[] };
      this.rankingPosts.push({ url, body });
      if (!this.pending || Number(rankMatch[1]) !== this.pending.request_id) {
        return jsonResponse(409, { detail: "already answered" });
      }
      const want = [...this.pending.refined_class_ids].sort((a, b) => a - b);
      const got = [...body.ranking].sort((a, b) => a - b);
      if (JSON.stringify(want) !== JSON.stringify(got)) {
        return jsonResponse(422, { detail: "ranking must be a permutation" });
      }
      const response = {
        request_id: this.pending.request_id,
        boxes: this.pending.boxes.length,
        ranking: body.ranking,
        applied: true,
      };
      // answered: the run resumes and the pending endpoint goes 204
      this.pending = null;
      return jsonResponse(200, response);
    }
    return jsonResponse(404, { detail: `unscripted ${method} ${url}` });
  };

  readonly eventSourceFactory = (): EventSourceLike => this.events;
}
