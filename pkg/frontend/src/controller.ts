/** Session state machine: optimistic step-indexed submission with
 * conflict-driven refresh. All mutation goes through the step index the
 * server handed out with the current query, so a stale submit can never
 * apply twice; on conflict the controller refetches and the UI re-renders
 * from server state alone. */

import { ApiError, SessionApi } from "./api.js";
import type { Correction, QueryPayload, QueryReady, StatePayload } from "./types.js";

export type ControllerListener = () => void;

export class SessionController {
  private query: QueryPayload | null = null;
  private state: StatePayload | null = null;
  private selection: number[] = [];
  private listeners: ControllerListener[] = [];
  private pollHandle: ReturnType<typeof setTimeout> | null = null;

  constructor(
    readonly api: SessionApi,
    readonly sessionId: string,
    private readonly pollMs = 250,
  ) {}

  onChange(listener: ControllerListener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l();
  }

  get currentQuery(): QueryPayload | null {
    return this.query;
  }

  get currentState(): StatePayload | null {
    return this.state;
  }

  get selectedItems(): number[] {
    return [...this.selection];
  }

  /** Pull query and diagnostics from the server; poll while computing. */
  async refresh(): Promise<void> {
    this.query = await this.api.getQuery(this.sessionId);
    this.state = await this.api.getState(this.sessionId);
    this.emit();
    if (this.query.status === "computing") {
      this.schedulePoll();
    }
  }

  private schedulePoll(): void {
    if (this.pollHandle !== null) return;
    this.pollHandle = setTimeout(() => {
      this.pollHandle = null;
      void this.refresh();
    }, this.pollMs);
  }

  stopPolling(): void {
    if (this.pollHandle !== null) {
      clearTimeout(this.pollHandle);
      this.pollHandle = null;
    }
  }

  /** Toggle an item of the current query; at most two stay selected. */
  toggleSelect(itemId: number): void {
    const q = this.query;
    if (!q || q.status !== "ready") return;
    if (!q.items.some((it) => it.id === itemId)) {
      throw new Error(`item ${itemId} is not part of the current query`);
    }
    const at = this.selection.indexOf(itemId);
    if (at >= 0) {
      this.selection.splice(at, 1);
    } else {
      if (this.selection.length === 2) this.selection.shift();
      this.selection.push(itemId);
    }
    this.emit();
  }

  /** The correction the current selection arms, if any.
   *
   * Two items of the same proposed group can only be split (cannot-link);
   * items of different groups can only be joined (must-link). Only
   * corrections that change the snapshot are offered.
   */
  armedCorrection(): Correction | null {
    const q = this.query;
    if (!q || q.status !== "ready" || this.selection.length !== 2) return null;
    const [a, b] = this.selection;
    const group = (id: number) => q.groups.findIndex((g) => g.includes(id));
    const sameGroup = group(a) === group(b);
    const items: [number, number] = a < b ? [a, b] : [b, a];
    return { items, same: !sameGroup };
  }

  /** Submit the armed correction under the current step index. */
  async submitCorrection(): Promise<boolean> {
    const correction = this.armedCorrection();
    const q = this.query;
    if (!correction || !q || q.status !== "ready") {
      throw new Error("no correction armed");
    }
    this.assertAtomInQuery(q, correction.items);
    return this.submit(q.step, {
      atom: correction.items,
      same: correction.same,
    });
  }

  /** Accept the snapshot as shown. */
  async accept(): Promise<boolean> {
    const q = this.query;
    if (!q || q.status !== "ready") throw new Error("no pending snapshot");
    return this.submit(q.step, { accept: true });
  }

  private assertAtomInQuery(q: QueryReady, items: [number, number]): void {
    const ids = new Set(q.items.map((it) => it.id));
    if (!ids.has(items[0]) || !ids.has(items[1]) || items[0] === items[1]) {
      throw new Error(`atom [${items}] is not part of the current query`);
    }
  }

  private async submit(
    step: number,
    feedback: { accept: true } | { atom: [number, number]; same: boolean },
  ): Promise<boolean> {
    try {
      await this.api.postFeedback(this.sessionId, step, feedback);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // stale step or still computing: converge on server truth
        this.selection = [];
        await this.refresh();
        return false;
      }
      throw err;
    }
    this.selection = [];
    await this.refresh();
    return true;
  }
}
