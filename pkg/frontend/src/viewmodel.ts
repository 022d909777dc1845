/** Annotation-queue view model.
 *
 * Holds everything the DOM renders: one card per queried sample with
 * selectable token chips, the current tag of every token, pattern
 * warnings, and submit status. The submitted payload is always exactly
 * the visible chip state; the view model never fabricates tags.
 */

import { ApiClient, HttpStatusError } from "./api.js";
import {
  parseScheme,
  patternWarnings,
  spanTags,
  type SchemeInfo,
} from "./tags.js";
import type { QueryEntry } from "./types.js";

export type CardStatus = "draft" | "submitting" | "done" | "rejected" | "retry";

export interface AnnotationCard {
  sampleId: string;
  tokens: string[];
  /** chip state: one tag per token; null = not yet tagged */
  tags: (string | null)[];
  preAnnotation: string[];
  strategyScore: number;
  attention?: number[][];
  status: CardStatus;
  /** token index highlighted after a server 422 */
  errorPosition: number | null;
  errorDetail: string | null;
  warnings: string[];
}

export type QueueView =
  | { kind: "idle"; status: string }
  | { kind: "training"; status: string }
  | { kind: "done"; status: string; error: string | null }
  | { kind: "cards"; status: string; cards: AnnotationCard[] };

export class AnnotationQueue {
  scheme: SchemeInfo | null = null;
  view: QueueView = { kind: "idle", status: "IDLE" };

  constructor(
    private readonly client: ApiClient,
    private readonly projectId: string,
  ) {}

  /** Pull the queued batch; non-AWAITING states become screen modes. */
  async fetchQueue(): Promise<QueueView> {
    try {
      const payload = await this.client.fetchQueries(this.projectId);
      this.scheme = parseScheme(payload.scheme_tags);
      const cards = payload.batch
        .slice()
        .sort((a, b) => b.strategy_score - a.strategy_score)
        .map((entry) => this.makeCard(entry));
      this.view = { kind: "cards", status: payload.status, cards };
    } catch (err) {
      if (err instanceof HttpStatusError && err.status === 409) {
        const body = err.body as { status?: string; error?: string | null };
        const status = body.status ?? "UNKNOWN";
        this.view =
          status === "TRAINING"
            ? { kind: "training", status }
            : status === "DONE"
              ? { kind: "done", status, error: body.error ?? null }
              : { kind: "idle", status };
      } else {
        throw err;
      }
    }
    return this.view;
  }

  private makeCard(entry: QueryEntry): AnnotationCard {
    return {
      sampleId: entry.sample_id,
      tokens: [...entry.tokens],
      // model pre-annotations arrive pre-selected
      tags: [...entry.prior_prediction_tags],
      preAnnotation: [...entry.prior_prediction_tags],
      strategyScore: entry.strategy_score,
      attention: entry.attention_matrix,
      status: "draft",
      errorPosition: null,
      errorDetail: null,
      warnings: [],
    };
  }

  private requireScheme(): SchemeInfo {
    if (!this.scheme) throw new Error("no scheme loaded yet");
    return this.scheme;
  }

  /** Tag a selected token range [start, end) with one attribute's span. */
  applySpan(
    card: AnnotationCard,
    start: number,
    end: number,
    attribute: string,
  ): void {
    const scheme = this.requireScheme();
    const derived = spanTags(scheme, attribute, end - start);
    for (let i = start; i < end; i += 1) {
      card.tags[i] = derived[i - start];
    }
    this.refreshWarnings(card);
  }

  markOutside(card: AnnotationCard, start: number, end: number): void {
    for (let i = start; i < end; i += 1) card.tags[i] = "O";
    this.refreshWarnings(card);
  }

  refreshWarnings(card: AnnotationCard): void {
    card.warnings = patternWarnings(this.requireScheme(), card.tags);
  }

  /** Every token needs exactly one tag before submit is allowed. */
  missingPositions(card: AnnotationCard): number[] {
    return card.tags
      .map((tag, i) => (tag === null ? i : -1))
      .filter((i) => i >= 0);
  }

  /** Submit the chip state verbatim. Ill-formed patterns only warn; a
   * missing tag blocks; server rejections highlight the position. */
  async submit(card: AnnotationCard): Promise<CardStatus> {
    const missing = this.missingPositions(card);
    if (missing.length > 0) {
      card.status = "draft";
      card.errorPosition = missing[0];
      card.errorDetail = "every token needs a tag";
      return card.status;
    }
    card.status = "submitting";
    card.errorPosition = null;
    card.errorDetail = null;
    let outcome;
    try {
      outcome = await this.client.submitAnnotation(
        this.projectId,
        card.sampleId,
        card.tags as string[],
      );
    } catch {
      // network failure: keep the draft and offer a retry
      card.status = "retry";
      card.errorDetail = "network failure, draft kept";
      return card.status;
    }
    if (outcome.kind === "accepted") {
      card.status = "done";
    } else {
      card.status = "rejected";
      card.errorPosition = outcome.rejection.position ?? null;
      card.errorDetail = outcome.rejection.detail;
    }
    return card.status;
  }

  /** Background intensity of token `col` when hovering token `row`. */
  attentionIntensity(card: AnnotationCard, row: number, col: number): number {
    if (!card.attention) return 0;
    return card.attention[row]?.[col] ?? 0;
  }
}
