import type { BoxDict, BoxResponse, PendingRequest, RunState, ServerEvent } from "./types.js";

/** Narrow fetch/EventSource shapes so tests can inject scripted doubles. */
export interface ResponseLike {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<ResponseLike>;

export interface MessageLike {
  data: string;
}

export interface EventSourceLike {
  addEventListener(type: string, listener: (ev: MessageLike) => void): void;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

/** Every event kind the service emits on /api/events. */
export const EVENT_KINDS = [
  "cycle_completed",
  "new_class_detected",
  "feedback_applied",
] as const;

export interface MutationResult<T> {
  status: number;
  body: T | { detail: string };
}

export class ConsoleApi {
  constructor(
    private readonly fetchFn: FetchLike,
    private readonly eventSourceFn: EventSourceFactory,
    private readonly base = "",
  ) {}

  async getState(): Promise<RunState | null> {
    const res = await this.fetchFn(`${this.base}/api/run/state`);
    if (res.status === 404) return null;
    return (await res.json()) as RunState;
  }

  async getPending(): Promise<PendingRequest | null> {
    const res = await this.fetchFn(`${this.base}/api/feedback/pending`);
    if (res.status === 204) return null;
    return (await res.json()) as PendingRequest;
  }

  async postBox(requestId: number, box: BoxDict): Promise<MutationResult<BoxResponse>> {
    const res = await this.fetchFn(`${this.base}/api/feedback/${requestId}/box`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(box),
    });
    return { status: res.status, body: (await res.json()) as MutationResult<BoxResponse>["body"] };
  }

  async postRanking(
    requestId: number,
    ranking: number[],
  ): Promise<MutationResult<Record<string, unknown>>> {
    const res = await this.fetchFn(`${this.base}/api/feedback/${requestId}/ranking`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ranking }),
    });
    return {
      status: res.status,
      body: (await res.json()) as MutationResult<Record<string, unknown>>["body"],
    };
  }

  /** Subscribe to the server-sent event stream; the browser handles replay. */
  openEvents(onEvent: (event: ServerEvent) => void): EventSourceLike {
    const source = this.eventSourceFn(`${this.base}/api/events`);
    for (const kind of EVENT_KINDS) {
      source.addEventListener(kind, (ev) => {
        let parsed: ServerEvent;
        try {
          parsed = JSON.parse(ev.data) as ServerEvent;
        } catch {
          return;
        }
        onEvent(parsed);
      });
    }
    return source;
  }
}
