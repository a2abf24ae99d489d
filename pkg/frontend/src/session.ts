/** One annotator's review session.
 *
 * The session is stateless with respect to labels: every label or vote shown
 * comes from a server response, so reloading the page (a fresh `load`)
 * reproduces the server state exactly.  Failed vote submissions wait in a
 * visible retry queue; duplicate-vote conflicts surface as notices without
 * moving the queue.
 */

import { ApiError, type ReviewApi } from "./api.js";
import { buildQueue, nextForAnnotator, type QueueOrder } from "./queue.js";
import type { ReviewQueueItem, VoteValue } from "./types.js";

export interface PendingVote {
  imageId: string;
  instanceIndex: number;
  vote: VoteValue;
  attempts: number;
  lastError: string;
}

export interface InstanceState {
  imageId: string;
  instanceIndex: number;
  label: ReviewQueueItem["label"];
  votes: { annotator_id: string; vote: VoteValue }[];
}

export class ReviewSession {
  queue: ReviewQueueItem[] = [];
  position = 0;
  notices: string[] = [];
  pending: PendingVote[] = [];

  constructor(
    readonly client: ReviewApi,
    readonly annotatorId: string,
    readonly order: QueueOrder = "uncertainty",
    readonly split?: string,
  ) {
    if (!annotatorId) throw new Error("annotator id must be configured");
  }

  async load(): Promise<void> {
    const images = await this.client.fetchAllImages(this.split);
    this.queue = buildQueue(images, this.order);
    const next = nextForAnnotator(this.queue, this.annotatorId);
    this.position = next === -1 ? this.queue.length : next;
  }

  current(): ReviewQueueItem | null {
    return this.position < this.queue.length ? this.queue[this.position] : null;
  }

  done(): boolean {
    return this.current() === null;
  }

  advance(): void {
    const next = nextForAnnotator(this.queue, this.annotatorId, this.position + 1);
    this.position = next === -1 ? this.queue.length : next;
  }

  back(): void {
    this.position = Math.max(0, this.position - 1);
  }

  /** Submit a vote on the current item and advance on success.
   *
   * 409 (someone already voted for this annotator id on the instance) is a
   * non-blocking notice and the position stays put; network failures park
   * the vote in the retry queue.
   */
  async vote(vote: VoteValue): Promise<void> {
    const item = this.current();
    if (item === null) return;
    try {
      const response = await this.client.submitVote(
        item.imageId,
        item.instanceIndex,
        this.annotatorId,
        vote,
      );
      item.votes = response.votes;
      item.label = response.label;
      this.advance();
    } catch (err) {
      if (err instanceof ApiError) {
        if (err.status === 409) {
          this.notices.push(`duplicate vote: ${err.message}`);
          return;
        }
        this.notices.push(`vote rejected (${err.status}): ${err.message}`);
        return;
      }
      const message = err instanceof Error ? err.message : String(err);
      this.pending.push({
        imageId: item.imageId,
        instanceIndex: item.instanceIndex,
        vote,
        attempts: 1,
        lastError: message,
      });
      this.notices.push(`vote queued for retry: ${message}`);
    }
  }

  /** Replay queued votes; successes are applied to the matching queue item. */
  async retryPending(): Promise<void> {
    const still: PendingVote[] = [];
    for (const entry of this.pending) {
      try {
        const response = await this.client.submitVote(
          entry.imageId,
          entry.instanceIndex,
          this.annotatorId,
          entry.vote,
        );
        const item = this.queue.find(
          (q) => q.imageId === entry.imageId && q.instanceIndex === entry.instanceIndex,
        );
        if (item) {
          item.votes = response.votes;
          item.label = response.label;
        }
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          this.notices.push(`duplicate vote: ${err.message}`);
          continue; // already recorded server-side; drop from the queue
        }
        still.push({
          ...entry,
          attempts: entry.attempts + 1,
          lastError: err instanceof Error ? err.message : String(err),
        });
      }
    }
    this.pending = still;
  }

  /** Label/vote state per instance, exactly as the server reported it. */
  snapshot(): InstanceState[] {
    return this.queue
      .map((item) => ({
        imageId: item.imageId,
        instanceIndex: item.instanceIndex,
        label: item.label,
        votes: item.votes.map((v) => ({ ...v })),
      }))
      .sort(
        (a, b) =>
          a.imageId.localeCompare(b.imageId) || a.instanceIndex - b.instanceIndex,
      );
  }
}
