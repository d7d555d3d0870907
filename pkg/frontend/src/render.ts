/** DOM rendering: proposed groups, selection, armed correction, accept
 * control, and a diagnostics sparkline. Pure functions of (container,
 * controller state); every render rebuilds from server-derived state. */

import type { SessionController } from "./controller.js";
import type { DiagnosticsPoint, QueryReady } from "./types.js";

export interface RenderHandlers {
  onToggle(itemId: number): void;
  onSubmit(): void;
  onAccept(): void;
}

export function renderSnapshot(
  container: HTMLElement,
  controller: SessionController,
  handlers: RenderHandlers,
): void {
  container.textContent = "";
  const q = controller.currentQuery;
  if (!q) {
    container.appendChild(note("loading session..."));
    return;
  }
  if (q.status === "computing") {
    container.appendChild(note(`computing next snapshot (step ${q.step})...`));
    return;
  }
  if (q.status === "converged") {
    container.appendChild(note(`session converged after ${q.step} steps`));
    return;
  }
  container.appendChild(header(q));
  container.appendChild(groupBoxes(q, controller.selectedItems, handlers));
  container.appendChild(controls(controller, handlers));
}

function note(text: string): HTMLElement {
  const div = document.createElement("div");
  div.className = "note";
  div.textContent = text;
  return div;
}

function header(q: QueryReady): HTMLElement {
  const div = document.createElement("div");
  div.className = "snapshot-header";
  div.textContent =
    `step ${q.step}: do you agree with this grouping of ` +
    `${q.items.length} items?`;
  return div;
}

function groupBoxes(
  q: QueryReady,
  selected: number[],
  handlers: RenderHandlers,
): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "groups";
  for (const group of q.groups) {
    const box = document.createElement("div");
    box.className = "group";
    for (const id of group) {
      const item = q.items.find((it) => it.id === id);
      const dot = document.createElement("button");
      dot.className = "item" + (selected.includes(id) ? " selected" : "");
      dot.dataset.itemId = String(id);
      dot.textContent = `#${id}`;
      if (item) {
        dot.title = `item ${id} at (${item.x.toFixed(2)}, ${item.y.toFixed(2)})`;
      }
      dot.addEventListener("click", () => handlers.onToggle(id));
      box.appendChild(dot);
    }
    wrap.appendChild(box);
  }
  return wrap;
}

function controls(
  controller: SessionController,
  handlers: RenderHandlers,
): HTMLElement {
  const bar = document.createElement("div");
  bar.className = "controls";

  const accept = document.createElement("button");
  accept.className = "accept";
  accept.textContent = "looks right";
  accept.addEventListener("click", () => handlers.onAccept());
  bar.appendChild(accept);

  const armed = controller.armedCorrection();
  const submit = document.createElement("button");
  submit.className = "submit";
  if (armed) {
    const verb = armed.same ? "must link" : "cannot link";
    submit.textContent = `${verb} #${armed.items[0]} and #${armed.items[1]}`;
    submit.disabled = false;
  } else {
    submit.textContent = "select two items to correct";
    submit.disabled = true;
  }
  submit.addEventListener("click", () => handlers.onSubmit());
  bar.appendChild(submit);
  return bar;
}

/** Inline SVG line chart of one diagnostics field over feedback steps. */
export function renderSeries(
  container: HTMLElement,
  series: DiagnosticsPoint[],
  fieldName: "constraints" | "distance" | "uncertainty",
  width = 320,
  height = 80,
): void {
  container.textContent = "";
  const points = series
    .map((p) => ({ step: p.step, value: p[fieldName] }))
    .filter((p): p is { step: number; value: number } => p.value !== null);
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  svg.dataset.points = String(points.length);
  if (points.length > 0) {
    const xs = points.map((p) => p.step);
    const ys = points.map((p) => p.value);
    const xMax = Math.max(...xs, 1);
    const yMax = Math.max(...ys, 1e-9);
    const path = points
      .map((p, i) => {
        const x = (p.step / xMax) * (width - 8) + 4;
        const y = height - 4 - (p.value / yMax) * (height - 8);
        return `${i === 0 ? "M" : "L"}${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .join(" ");
    const line = document.createElementNS("http://www.w3.org/2000/svg", "path");
    line.setAttribute("d", path);
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", "currentColor");
    svg.appendChild(line);
  }
  const label = document.createElementNS("http://www.w3.org/2000/svg", "title");
  label.textContent = fieldName;
  svg.appendChild(label);
  container.appendChild(svg);
}
