/** Payload types for the annotation service API (version "v1"). */

export interface QueryEntry {
  sample_id: string;
  tokens: string[];
  strategy_score: number;
  prior_prediction_tags: string[];
  attention_matrix?: number[][];
}

export interface QueriesPayload {
  version: string;
  status: string;
  scheme_tags: string[];
  batch: QueryEntry[];
}

export interface StatusPayload {
  version: string;
  status: string;
  detail?: string;
  error?: string | null;
}

export interface AnnotationAck {
  version: string;
  status: string;
  received: number | null;
}

export interface AnnotationRejection {
  version: string;
  detail: string;
  position?: number;
}

export interface MetricsPayload {
  version: string;
  status: string;
  round_index: number;
  history: unknown[];
  labeled_count: number;
  labels: Record<string, string[]>;
  error: string | null;
}

export interface AttentionPayload {
  version: string;
  tokens: string[];
  matrix: number[][];
}
