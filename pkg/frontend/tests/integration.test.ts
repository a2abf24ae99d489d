/** End-to-end review flow against a live annotation service.
 *
 * Spawns the real backend on a synthetic 10-image store with a quickly
 * trained checkpoint for pre-labels, drives four scripted annotator
 * sessions through the API client, and verifies that (a) pre-labels are
 * displayed, (b) the final labels equal the consensus of the vote ledger,
 * and (c) a page reload reproduces the server state exactly.
 */

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { expectedLabelState } from "../src/consensus.js";
import { ReviewSession } from "../src/session.js";
import type { VoteValue } from "../src/types.js";

const PORT = 8931 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;
const ANNOTATORS = ["ann-1", "ann-2", "ann-3", "ann-4"];

let workdir: string;
let server: ChildProcess | undefined;

function runCli(args: string[]): void {
  const out = spawnSync("python3", ["-m", "eyecontact.cli", ...args], {
    encoding: "utf-8",
  });
  if (out.status !== 0) {
    throw new Error(`cli ${args[0]} failed (${out.status}):\n${out.stderr}`);
  }
}

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const response = await fetch(`${BASE}/api/v1/progress`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("backend did not come up in time");
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
}

/** Deterministic scripted vote: agreement on most instances, an even split
 * on every 5th, an ambiguous pile-up on every 7th. */
function scriptedVote(annotator: string, instanceKey: number, preLabel: VoteValue | null): VoteValue {
  const base: VoteValue = preLabel ?? "ambiguous";
  const flip: VoteValue = base === "looking" ? "not_looking" : "looking";
  if (instanceKey % 7 === 0) {
    return annotator === "ann-1" ? base : "ambiguous";
  }
  if (instanceKey % 5 === 0) {
    return annotator === "ann-1" || annotator === "ann-2" ? base : flip;
  }
  return annotator === "ann-4" ? flip : base;
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "review-ui-"));
  const trainData = join(workdir, "train.jsonl");
  const storeData = join(workdir, "store-data.jsonl");
  const ckpt = join(workdir, "ckpt.json");

  runCli(["synth", "--n-images", "80", "--noise-sigma", "1.0", "--seed", "11", "--out", trainData]);
  runCli([
    "train", "--data", trainData, "--out", ckpt,
    "--epochs", "1", "--batch-size", "16", "--seed", "0",
  ]);
  runCli([
    "synth", "--n-images", "10", "--peds-min", "1", "--peds-max", "2",
    "--noise-sigma", "1.0", "--seed", "12", "--out", storeData,
  ]);

  server = spawn(
    "python3",
    [
      "-m", "eyecontact.cli", "serve",
      "--data", storeData,
      "--store", join(workdir, "store.json"),
      "--ckpt", ckpt,
      "--port", String(PORT),
    ],
    { stdio: ["ignore", "inherit", "inherit"] },
  );
  await waitForServer();
}, 120_000);

afterAll(() => {
  server?.kill("SIGTERM");
  if (workdir) rmSync(workdir, { recursive: true, force: true });
});

describe("review flow against a running service", () => {
  it("displays model pre-labels for every posed instance", async () => {
    const session = new ReviewSession(new ApiClient(BASE), "preview");
    await session.load();
    expect(session.queue.length).toBeGreaterThan(0);
    for (const item of session.queue) {
      expect(item.score).not.toBeNull();
      expect(item.preLabel === "looking" || item.preLabel === "not_looking").toBe(true);
    }
    // Uncertainty ordering: distance from 0.5 never decreases along the queue.
    const distances = session.queue.map((q) => Math.abs((q.score ?? 0.5) - 0.5));
    for (let i = 1; i < distances.length; i += 1) {
      expect(distances[i]).toBeGreaterThanOrEqual(distances[i - 1]);
    }
  }, 30_000);

  it("four scripted sessions produce ledger-consistent consensus labels", async () => {
    let finalSession: ReviewSession | undefined;
    for (const annotator of ANNOTATORS) {
      const session = new ReviewSession(new ApiClient(BASE), annotator, "sequential");
      await session.load();
      while (!session.done()) {
        const item = session.current()!;
        const key = Number(item.imageId.replace(/\D/g, "")) * 10 + item.instanceIndex;
        await session.vote(scriptedVote(annotator, key, item.preLabel));
      }
      expect(session.pending).toEqual([]);
      finalSession = session;
    }

    // Every instance now carries exactly four votes; the stored label must
    // equal the client-side consensus of its ledger.
    const exported = await new ApiClient(BASE).exportDataset();
    const records = exported
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const seenLabels = new Set<string>();
    for (const record of records) {
      for (const inst of record.instances) {
        expect(inst.votes).toHaveLength(4);
        const expected = expectedLabelState(inst.votes as VoteValue[]);
        expect(inst.label).toBe(expected);
        seenLabels.add(String(inst.label));
      }
    }
    // The scripted policies must have produced both kept and discarded labels.
    expect(seenLabels.has("ambiguous")).toBe(true);
    expect([...seenLabels].some((l) => l === "looking" || l === "not_looking")).toBe(true);

    // Reload: a fresh session sees exactly the state the last session holds.
    const reloaded = new ReviewSession(new ApiClient(BASE), "ann-4", "sequential");
    await reloaded.load();
    expect(reloaded.snapshot()).toEqual(finalSession!.snapshot());
  }, 60_000);

  it("duplicate votes surface as 409 notices without advancing", async () => {
    const session = new ReviewSession(new ApiClient(BASE), "ann-1", "sequential");
    await session.load();
    expect(session.done()).toBe(true); // ann-1 voted everything already
    session.position = 0; // force a revisit of an already-voted item
    await session.vote("looking");
    expect(session.notices.some((n) => /duplicate/.test(n))).toBe(true);
    expect(session.position).toBe(0);
  }, 30_000);

  it("progress reflects the completed review", async () => {
    const response = await fetch(`${BASE}/api/v1/progress`);
    const progress = await response.json();
    expect(progress.pending).toBe(0);
    expect(progress.labeled + progress.discarded).toBeGreaterThan(0);
    expect(progress.revision).toBeGreaterThan(0);
  });
});
