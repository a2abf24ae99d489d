/** Review queue construction and ordering. */

import type { ApiImage, ReviewQueueItem } from "./types.js";

export type QueueOrder = "uncertainty" | "sequential";

export function flattenImages(images: ApiImage[]): ReviewQueueItem[] {
  const items: ReviewQueueItem[] = [];
  for (const image of images) {
    for (const inst of image.instances) {
      items.push({
        imageId: image.image_id,
        imageWidth: image.width,
        imageHeight: image.height,
        instanceIndex: inst.instance_index,
        bbox: inst.bbox,
        keypoints: inst.keypoints,
        preLabel: inst.pre_label,
        score: inst.score,
        label: inst.label,
        votes: inst.votes,
      });
    }
  }
  return items;
}

/** Model uncertainty: distance of the score from the decision boundary.
 * Items without a score sort last. */
export function uncertainty(item: ReviewQueueItem): number {
  return item.score === null ? Number.POSITIVE_INFINITY : Math.abs(item.score - 0.5);
}

/** Build the queue: least-confident pre-labels first by default so human
 * effort lands where the model is unsure; "sequential" keeps dataset order.
 * Sorting is stable, so equal-uncertainty items stay in dataset order. */
export function buildQueue(images: ApiImage[], order: QueueOrder = "uncertainty"): ReviewQueueItem[] {
  const items = flattenImages(images);
  if (order === "sequential") return items;
  return items
    .map((item, index) => ({ item, index }))
    .sort((a, b) => uncertainty(a.item) - uncertainty(b.item) || a.index - b.index)
    .map(({ item }) => item);
}

/** Index of the next item (at or after `from`) this annotator has not voted
 * on yet, or -1 when the queue is exhausted for them. */
export function nextForAnnotator(
  queue: ReviewQueueItem[],
  annotatorId: string,
  from = 0,
): number {
  for (let i = Math.max(from, 0); i < queue.length; i += 1) {
    const voted = queue[i].votes.some((v) => v.annotator_id === annotatorId);
    if (!voted && queue[i].votes.length < 4) return i;
  }
  return -1;
}
