/** Scripted end-to-end session against the real annotation server.
 *
 * Runs only when RUN_SERVER_TESTS=1 (slow: spawns the Python backend,
 * trains a tiny committee round). The session drives the same view
 * model the DOM renders: fetch the queued batch, annotate one sample by
 * span selection, submit, then verify the label landed verbatim in the
 * project's labeled set; a deliberately invalid tag must come back as a
 * 422 with the offending token highlighted.
 */

import { spawn, execFileSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotationQueue } from "../src/viewmodel.js";
import type { MetricsPayload } from "../src/types.js";

const RUN = process.env.RUN_SERVER_TESTS === "1";
const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

const MAKE_CORPUS = `
import sys
from tagex import corpus
spec = corpus.default_synthetic_spec(sample_count=14)
generated = corpus.generate_synthetic(spec, seed=4)
profiles = generated.profiles
for profile in profiles[6:]:
    profile.annotations = {}
corpus.save_corpus(profiles, sys.argv[1])
`;

let server: ChildProcess | null = null;
let workdir = "";

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i += 1) {
    try {
      const res = await fetch(`${BASE}/docs`);
      if (res.status < 500) return;
    } catch {
      await new Promise((r) => setTimeout(r, 200));
    }
  }
  throw new Error("server never came up");
}

async function createProject(): Promise<string> {
  const res = await fetch(`${BASE}/projects`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      corpus: join(workdir, "corpus.jsonl"),
      model_config: {
        variant: "opentag",
        embed_dim: 12,
        hidden: 8,
        attention_dim: 16,
        batch_size: 4,
        dropout: 0.2,
        epochs: 0,
        last_k_average: 0,
        seed: 0,
        attributes: ["brand", "capacity", "flavor"],
      },
      al_config: {
        strategy: "TF",
        query_batch: 2,
        rounds: 2,
        committee_epochs: 2,
      },
    }),
  });
  expect(res.status).toBe(200);
  const body = (await res.json()) as { project_id: string };
  return body.project_id;
}

async function waitForStatus(
  projectId: string,
  status: string,
): Promise<void> {
  for (let i = 0; i < 300; i += 1) {
    const res = await fetch(`${BASE}/projects/${projectId}`);
    const body = (await res.json()) as { status: string };
    if (body.status === status) return;
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`never reached ${status}`);
}

describe.runIf(RUN)("annotation session against the live server", () => {
  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "tagex-ui-"));
    execFileSync("python3", ["-c", MAKE_CORPUS, join(workdir, "corpus.jsonl")]);
    server = spawn(
      "python3",
      ["-m", "tagex.cli", "serve", "--port", String(PORT),
       "--store", join(workdir, "store")],
      { stdio: "ignore" },
    );
    await waitForServer();
  }, 120_000);

  afterAll(() => {
    server?.kill();
  });

  it("round-trips a span-selected annotation and highlights a 422", async () => {
    const projectId = await createProject();
    const client = new ApiClient(BASE);
    await client.startRound(projectId);
    await waitForStatus(projectId, "AWAITING_LABELS");

    const queue = new AnnotationQueue(client, projectId);
    const view = await queue.fetchQueue();
    expect(view.kind).toBe("cards");
    if (view.kind !== "cards") return;
    expect(view.cards.length).toBe(2);

    // annotate the first card by span selection: tokens [0, 2) as brand
    const card = view.cards[0];
    queue.markOutside(card, 0, card.tokens.length);
    queue.applySpan(card, 0, 2, "brand");
    const expected = [...card.tags] as string[];
    expect(await queue.submit(card)).toBe("done");

    // a deliberately invalid tag on the second card -> 422 highlight
    const second = view.cards[1];
    queue.markOutside(second, 0, second.tokens.length);
    second.tags[1] = "Q";
    expect(await queue.submit(second)).toBe("rejected");
    expect(second.errorPosition).toBe(1);

    // fix it and finish the batch so the round advances
    second.tags[1] = "O";
    expect(await queue.submit(second)).toBe("done");

    // the labeled set now holds the exact submitted tag sequence
    const metrics = (await client.fetchMetrics(projectId)) as MetricsPayload;
    expect(metrics.labels[card.sampleId]).toEqual(expected);
    expect(metrics.labeled_count).toBeGreaterThanOrEqual(8);
  }, 300_000);
});

describe.runIf(!RUN)("annotation session against the live server", () => {
  it.skip("set RUN_SERVER_TESTS=1 to exercise the live server", () => {});
});
