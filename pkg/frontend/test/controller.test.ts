import { afterEach, describe, expect, it, vi } from "vitest";

import { SessionApi } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import type { QueryPayload } from "../src/types.js";
import { QUERY_FIXTURE, STATE_FIXTURE } from "./fixtures.js";

interface MockServer {
  fetchMock: ReturnType<typeof vi.fn>;
  feedbackBodies: unknown[];
}

/** Fetch stub: serves a query/state pair, 409s stale feedback steps. */
function mockServer(step = 0): MockServer {
  let current: QueryPayload = structuredClone({ ...QUERY_FIXTURE, step });
  const feedbackBodies: unknown[] = [];
  const fetchMock = vi.fn(async (url: string, init?: RequestInit) => {
    const path = url.toString();
    if (path.endsWith("/query")) {
      return jsonResponse(200, current);
    }
    if (path.endsWith("/state")) {
      return jsonResponse(200, STATE_FIXTURE);
    }
    if (path.endsWith("/feedback")) {
      const body = JSON.parse(String(init?.body));
      if (body.step !== current.step) {
        return jsonResponse(409, {
          code: "stale_step",
          message: "stale",
          detail: { current_step: current.step },
        });
      }
      feedbackBodies.push(body);
      current = structuredClone({ ...QUERY_FIXTURE, step: current.step + 1 });
      return jsonResponse(200, {
        state: "selecting",
        step: current.step,
        accepted: !!body.accept,
        diagnostics: {},
      });
    }
    throw new Error(`unexpected fetch ${path}`);
  });
  vi.stubGlobal("fetch", fetchMock);
  return { fetchMock, feedbackBodies };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function makeController(): SessionController {
  return new SessionController(new SessionApi("http://server"), "sid");
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("SessionController", () => {
  it("reconstructs its whole view from the GET endpoints", async () => {
    mockServer();
    const controller = makeController();
    await controller.refresh();
    expect(controller.currentQuery?.status).toBe("ready");
    expect(controller.currentState?.series).toHaveLength(2);
  });

  it("submits only atoms from the current query", async () => {
    mockServer();
    const controller = makeController();
    await controller.refresh();
    expect(() => controller.toggleSelect(999)).toThrow(/not part/);
    controller.toggleSelect(2);
    controller.toggleSelect(5);
    const armed = controller.armedCorrection();
    expect(armed).not.toBeNull();
    const ids = new Set(QUERY_FIXTURE.items.map((it) => it.id));
    expect(ids.has(armed!.items[0]) && ids.has(armed!.items[1])).toBe(true);
  });

  it("selection keeps at most two items and toggles off", async () => {
    mockServer();
    const controller = makeController();
    await controller.refresh();
    controller.toggleSelect(2);
    controller.toggleSelect(5);
    controller.toggleSelect(11);
    expect(controller.selectedItems).toEqual([5, 11]);
    controller.toggleSelect(11);
    expect(controller.selectedItems).toEqual([5]);
  });

  it("applies a correction under the current step", async () => {
    const server = mockServer();
    const controller = makeController();
    await controller.refresh();
    controller.toggleSelect(2);
    controller.toggleSelect(21);
    const applied = await controller.submitCorrection();
    expect(applied).toBe(true);
    expect(server.feedbackBodies).toEqual([
      { step: 0, atom: [2, 21], same: true },
    ]);
    expect(controller.currentQuery?.step).toBe(1);
    expect(controller.selectedItems).toEqual([]);
  });

  it("handles a stale submit by refetching without duplicating", async () => {
    const server = mockServer(1); // server already at step 1
    const controller = makeController();
    await controller.refresh();
    // simulate a stale client: force the cached step backwards
    (controller as unknown as { query: { step: number } }).query.step = 0;
    controller.toggleSelect(2);
    controller.toggleSelect(5);
    const applied = await controller.submitCorrection();
    expect(applied).toBe(false); // conflict: nothing applied
    expect(server.feedbackBodies).toEqual([]);
    expect(controller.currentQuery?.step).toBe(1); // refreshed to server truth
    expect(controller.selectedItems).toEqual([]);
  });

  it("accept posts the accept flag for the current step", async () => {
    const server = mockServer();
    const controller = makeController();
    await controller.refresh();
    await controller.accept();
    expect(server.feedbackBodies).toEqual([{ step: 0, accept: true }]);
  });
});
