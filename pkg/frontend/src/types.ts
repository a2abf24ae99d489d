/** Wire types mirroring the review service API payloads. */

export type VoteValue = "looking" | "not_looking" | "ambiguous";

/** Instance label as the server reports it: consensus result or pending. */
export type LabelState = VoteValue | null;

export interface VoteEntry {
  annotator_id: string;
  vote: VoteValue;
}

export interface ApiInstance {
  instance_index: number;
  bbox: [number, number, number, number];
  label: LabelState;
  votes: VoteEntry[];
  keypoints: number[][] | null;
  track_id: string | null;
  score: number | null;
  pre_label: "looking" | "not_looking" | null;
}

export interface ApiImage {
  image_id: string;
  width: number;
  height: number;
  split: string;
  instances: ApiInstance[];
}

export interface ImageSummary {
  image_id: string;
  width: number;
  height: number;
  split: string;
  n_instances: number;
}

export interface ImagePage {
  total: number;
  offset: number;
  items: ImageSummary[];
}

export interface Progress {
  labeled: number;
  discarded: number;
  pending: number;
  revision: number;
}

export interface VoteResponse {
  image_id: string;
  instance_index: number;
  votes: VoteEntry[];
  label: LabelState;
  revision: number;
}

/** One reviewable instance, flattened out of its image record. */
export interface ReviewQueueItem {
  imageId: string;
  imageWidth: number;
  imageHeight: number;
  instanceIndex: number;
  bbox: [number, number, number, number];
  keypoints: number[][] | null;
  preLabel: "looking" | "not_looking" | null;
  score: number | null;
  label: LabelState;
  votes: VoteEntry[];
}
