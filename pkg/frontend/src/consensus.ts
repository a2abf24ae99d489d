/** Client-side mirror of the server's vote consensus so badges can render
 * without a refetch.  Must agree with the server rule exactly: a class label
 * sticks only when at least 3 of the 4 votes pick it; everything else is
 * discarded. */

import type { LabelState, VoteValue } from "./types.js";

export const VOTES_PER_INSTANCE = 4;
export const MIN_AGREEMENT = 3;

export type ConsensusResult = "looking" | "not_looking" | "discarded";

export function consensusLabel(votes: VoteValue[]): ConsensusResult {
  if (votes.length !== VOTES_PER_INSTANCE) {
    throw new Error(`consensus needs exactly ${VOTES_PER_INSTANCE} votes, got ${votes.length}`);
  }
  let looking = 0;
  let notLooking = 0;
  for (const vote of votes) {
    if (vote === "looking") looking += 1;
    else if (vote === "not_looking") notLooking += 1;
  }
  if (looking >= MIN_AGREEMENT) return "looking";
  if (notLooking >= MIN_AGREEMENT) return "not_looking";
  return "discarded";
}

/** The label state the server will report for a given vote ledger: null
 * while votes are incomplete, "ambiguous" for a discarded instance. */
export function expectedLabelState(votes: VoteValue[], baseline: LabelState = null): LabelState {
  if (votes.length < VOTES_PER_INSTANCE) return baseline;
  const result = consensusLabel(votes);
  return result === "discarded" ? "ambiguous" : result;
}
