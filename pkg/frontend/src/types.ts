/** Wire types for the operator service API. */

export interface ComponentDict {
  mean: [number, number];
  cov: [[number, number], [number, number]];
  weight: number;
  support_count: number;
  class_id: number;
}

export interface ModelDict {
  components: ComponentDict[];
  outlier_threshold: number;
}

export interface WindowSnapshot {
  cycle: number;
  option_ids: number[];
  /** [packet loss %, energy mC] pairs, one per option. */
  points: [number, number][];
  class_ids: number[];
  memberships: number[];
}

export interface BoxDict {
  x_min: number;
  x_max: number;
  y_min: number;
  y_max: number;
}

export interface PendingRequest {
  request_id: number;
  model: ModelDict;
  window: WindowSnapshot[];
  new_class_ids: number[];
  status: string;
  boxes: BoxDict[];
  refined: ModelDict;
  refined_class_ids: number[];
}

export interface RunState {
  status: string;
  approach: string;
  cell: string;
  error: string | null;
  pending_request_id: number | null;
  events: number;
  cycle?: number;
}

export interface BoxResponse {
  request_id: number;
  boxes: number;
  model: ModelDict;
  class_ids: number[];
}

export interface ServerEvent {
  seq: number;
  kind: string;
  data: Record<string, unknown>;
}
