/** Thin typed client over the session service's five endpoints. */

import type {
  ErrorEnvelope,
  FeedbackResponse,
  QueryPayload,
  StatePayload,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly detail: unknown;

  constructor(status: number, envelope: ErrorEnvelope) {
    super(envelope.message);
    this.status = status;
    this.code = envelope.code;
    this.detail = envelope.detail;
  }
}

async function request<T>(
  baseUrl: string,
  path: string,
  init?: RequestInit,
): Promise<T> {
  const resp = await fetch(`${baseUrl}${path}`, init);
  if (!resp.ok) {
    let envelope: ErrorEnvelope;
    try {
      envelope = (await resp.json()) as ErrorEnvelope;
    } catch {
      envelope = { code: "http_error", message: `HTTP ${resp.status}` };
    }
    throw new ApiError(resp.status, envelope);
  }
  return (await resp.json()) as T;
}

export class SessionApi {
  constructor(readonly baseUrl: string) {}

  async createSession(
    dataset: string,
    config: Record<string, unknown>,
  ): Promise<string> {
    const body = JSON.stringify({ dataset, config });
    const resp = await request<{ session_id: string }>(this.baseUrl, "/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body,
    });
    return resp.session_id;
  }

  getQuery(sessionId: string): Promise<QueryPayload> {
    return request(this.baseUrl, `/sessions/${sessionId}/query`);
  }

  postFeedback(
    sessionId: string,
    step: number,
    feedback: { accept: true } | { atom: [number, number]; same: boolean },
  ): Promise<FeedbackResponse> {
    const body =
      "accept" in feedback
        ? { step, accept: true }
        : { step, atom: feedback.atom, same: feedback.same };
    return request(this.baseUrl, `/sessions/${sessionId}/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getState(sessionId: string): Promise<StatePayload> {
    return request(this.baseUrl, `/sessions/${sessionId}/state`);
  }

  async getTrace(sessionId: string): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/trace`);
    if (!resp.ok) {
      throw new ApiError(resp.status, {
        code: "http_error",
        message: `HTTP ${resp.status}`,
      });
    }
    return resp.text();
  }
}
