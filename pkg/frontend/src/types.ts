/** Payload shapes of the session service's JSON contract. */

export interface ItemView {
  id: number;
  x: number;
  y: number;
}

export interface SnapshotPair {
  items: [number, number];
  same: boolean;
}

/** GET /sessions/{id}/query when a snapshot is pending. */
export interface QueryReady {
  status: "ready";
  step: number;
  items: ItemView[];
  groups: number[][];
  snapshot: SnapshotPair[];
}

export interface QueryComputing {
  status: "computing";
  step: number;
}

export interface QueryConverged {
  status: "converged";
  step: number;
}

export type QueryPayload = QueryReady | QueryComputing | QueryConverged;

export interface DiagnosticsPoint {
  step: number;
  constraints: number | null;
  distance: number | null;
  uncertainty: number | null;
}

export interface StatePayload {
  lifecycle: string;
  step: number;
  clustering: number[];
  diagnostics: Record<string, number>;
  series: DiagnosticsPoint[];
}

export interface FeedbackResponse {
  state: string;
  step: number;
  accepted: boolean;
  diagnostics: Record<string, number>;
}

export interface ErrorEnvelope {
  code: string;
  message: string;
  detail?: unknown;
}

/** One armed (but not yet submitted) pair correction. */
export interface Correction {
  items: [number, number];
  same: boolean;
}
