/** End-to-end check against a running session service.
 *
 * Reads a fixture produced by `sqbc trace-fixture` (the in-process library
 * run: dataset + config + the exact feedback the simulated expert gave +
 * the resulting trace), creates a server session with the same config,
 * replays the same feedback through the HTTP client, and asserts the
 * server's trace equals the fixture's, line for line (wall-clock
 * diagnostics excluded).
 *
 * Usage: SQBC_URL=http://127.0.0.1:8321 tsx scripts/integration.ts fixture.json
 */

import { readFileSync } from "node:fs";

import { SessionApi } from "../src/api.js";

interface Fixture {
  dataset: string;
  config: Record<string, unknown>;
  feedback: { step: number; atom: [number, number]; same: boolean }[];
  trace_jsonl: string;
}

function canonicalTrace(jsonl: string): string {
  return jsonl
    .trim()
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => {
      const payload = JSON.parse(line) as { diag?: Record<string, unknown> };
      if (payload.diag) delete payload.diag["wall_ms"];
      return JSON.stringify(payload);
    })
    .join("\n");
}

async function waitReady(api: SessionApi, sid: string): Promise<number> {
  for (let i = 0; i < 400; i++) {
    const q = await api.getQuery(sid);
    if (q.status === "ready") return q.step;
    if (q.status === "converged") throw new Error("session converged early");
    await new Promise((r) => setTimeout(r, 50));
  }
  throw new Error("server never produced a query");
}

async function main(): Promise<void> {
  const fixturePath = process.argv[2];
  if (!fixturePath) throw new Error("usage: integration.ts <fixture.json>");
  const baseUrl = process.env.SQBC_URL ?? "http://127.0.0.1:8321";
  const fixture = JSON.parse(readFileSync(fixturePath, "utf-8")) as Fixture;

  const api = new SessionApi(baseUrl);
  const sid = await api.createSession(fixture.dataset, fixture.config);
  console.log(`created session ${sid} on ${fixture.dataset}`);

  for (const fb of fixture.feedback) {
    const step = await waitReady(api, sid);
    if (step !== fb.step) {
      throw new Error(`server at step ${step}, fixture expects ${fb.step}`);
    }
    await api.postFeedback(sid, step, { atom: fb.atom, same: fb.same });
    console.log(`step ${step}: posted [${fb.atom}] same=${fb.same}`);
  }
  await waitReady(api, sid).catch(() => 0); // let the last advance finish

  const serverTrace = canonicalTrace(await api.getTrace(sid));
  const fixtureTrace = canonicalTrace(fixture.trace_jsonl);
  if (serverTrace !== fixtureTrace) {
    console.error("--- server trace ---\n" + serverTrace);
    console.error("--- fixture trace ---\n" + fixtureTrace);
    throw new Error("server trace diverged from the in-process run");
  }
  console.log(
    `trace identical to the in-process run ` +
      `(${fixture.feedback.length} steps). round trip OK`,
  );
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
