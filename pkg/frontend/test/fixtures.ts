/** A query payload captured from a scripted server session (3 blobs,
 * k=3, query size 10): ten items proposed in three groups. */

import type { QueryReady, StatePayload } from "../src/types.js";

export const QUERY_FIXTURE: QueryReady = {
  status: "ready",
  step: 0,
  items: [
    { id: 2, x: -1.2, y: -0.9 },
    { id: 5, x: -1.0, y: -1.1 },
    { id: 11, x: -0.8, y: -0.7 },
    { id: 21, x: 1.4, y: -0.6 },
    { id: 24, x: 1.1, y: -0.8 },
    { id: 29, x: 1.3, y: -1.0 },
    { id: 41, x: -0.2, y: 1.5 },
    { id: 44, x: 0.1, y: 1.2 },
    { id: 53, x: -0.1, y: 1.4 },
    { id: 57, x: 0.2, y: 1.6 },
  ],
  groups: [
    [2, 5, 11],
    [21, 24, 29],
    [41, 44, 53, 57],
  ],
  snapshot: pairsFromGroups(
    [2, 5, 11, 21, 24, 29, 41, 44, 53, 57],
    [
      [2, 5, 11],
      [21, 24, 29],
      [41, 44, 53, 57],
    ],
  ),
};

export const STATE_FIXTURE: StatePayload = {
  lifecycle: "awaiting_feedback",
  step: 2,
  clustering: [1, 1, 1, 2, 2, 3],
  diagnostics: { constraints: 2, confirmations: 0, sweeps: 100 },
  series: [
    { step: 0, constraints: 1, distance: 0.21, uncertainty: 0.4 },
    { step: 1, constraints: 2, distance: 0.12, uncertainty: 0.3 },
  ],
};

export function pairsFromGroups(
  items: number[],
  groups: number[][],
): { items: [number, number]; same: boolean }[] {
  const groupOf = new Map<number, number>();
  groups.forEach((g, gi) => g.forEach((id) => groupOf.set(id, gi)));
  const out: { items: [number, number]; same: boolean }[] = [];
  const sorted = [...items].sort((a, b) => a - b);
  for (let i = 0; i < sorted.length; i++) {
    for (let j = i + 1; j < sorted.length; j++) {
      out.push({
        items: [sorted[i], sorted[j]],
        same: groupOf.get(sorted[i]) === groupOf.get(sorted[j]),
      });
    }
  }
  return out;
}
