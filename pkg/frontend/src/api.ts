/** Thin fetch client for the annotation service; the UI talks to the
 * backend exclusively through this module. */

import type {
  AnnotationAck,
  AnnotationRejection,
  AttentionPayload,
  MetricsPayload,
  QueriesPayload,
} from "./types.js";

export class HttpStatusError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: unknown,
  ) {
    super(`HTTP ${status}`);
  }
}

export type SubmitOutcome =
  | { kind: "accepted"; ack: AnnotationAck }
  | { kind: "rejected"; status: number; rejection: AnnotationRejection };

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.url(path));
    const body = (await response.json()) as T;
    if (!response.ok) {
      throw new HttpStatusError(response.status, body);
    }
    return body;
  }

  /** Current query batch; throws HttpStatusError(409) while TRAINING. */
  fetchQueries(projectId: string): Promise<QueriesPayload> {
    return this.getJson(`/projects/${projectId}/queries`);
  }

  fetchMetrics(projectId: string): Promise<MetricsPayload> {
    return this.getJson(`/projects/${projectId}/metrics`);
  }

  fetchAttention(
    projectId: string,
    sampleId: string,
  ): Promise<AttentionPayload> {
    return this.getJson(`/projects/${projectId}/attention/${sampleId}`);
  }

  async startRound(projectId: string): Promise<void> {
    const response = await this.fetchFn(this.url(`/projects/${projectId}/rounds`), {
      method: "POST",
    });
    if (!response.ok) {
      throw new HttpStatusError(response.status, await response.json());
    }
  }

  /** Submit one sample's tags exactly as given; 4xx returns "rejected". */
  async submitAnnotation(
    projectId: string,
    sampleId: string,
    tags: string[],
  ): Promise<SubmitOutcome> {
    const response = await this.fetchFn(
      this.url(`/projects/${projectId}/annotations`),
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ sample_id: sampleId, tags }),
      },
    );
    const body = await response.json();
    if (response.ok) {
      return { kind: "accepted", ack: body as AnnotationAck };
    }
    return {
      kind: "rejected",
      status: response.status,
      rejection: body as AnnotationRejection,
    };
  }
}
