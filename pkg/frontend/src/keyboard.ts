/** Keyboard bindings: 1/2/3 vote looking / not looking / ambiguous,
 * n skips forward, p steps back. */

import type { VoteValue } from "./types.js";

export type KeyAction =
  | { kind: "vote"; vote: VoteValue }
  | { kind: "next" }
  | { kind: "prev" };

const VOTE_KEYS: Record<string, VoteValue> = {
  "1": "looking",
  "2": "not_looking",
  "3": "ambiguous",
};

export function actionForKey(key: string): KeyAction | null {
  const vote = VOTE_KEYS[key];
  if (vote !== undefined) return { kind: "vote", vote };
  if (key === "n") return { kind: "next" };
  if (key === "p") return { kind: "prev" };
  return null;
}
