/** Bootstrap: create or resume a session against the service and keep the
 * snapshot view plus diagnostics charts in sync with the controller. */

import { SessionApi } from "./api.js";
import { SessionController } from "./controller.js";
import { renderSeries, renderSnapshot } from "./render.js";

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

export async function boot(root: HTMLElement): Promise<SessionController> {
  const server = param("server", "http://127.0.0.1:8321");
  const dataset = param("dataset", "blobs");
  const api = new SessionApi(server);
  const sessionId =
    param("session", "") || (await api.createSession(dataset, { k: 3 }));

  const snapshotEl = document.createElement("div");
  snapshotEl.id = "snapshot";
  const chartsEl = document.createElement("div");
  chartsEl.id = "charts";
  const constraintsEl = document.createElement("div");
  const distanceEl = document.createElement("div");
  chartsEl.append(constraintsEl, distanceEl);
  root.append(snapshotEl, chartsEl);

  const controller = new SessionController(api, sessionId);
  const handlers = {
    onToggle: (id: number) => controller.toggleSelect(id),
    onSubmit: () => void controller.submitCorrection(),
    onAccept: () => void controller.accept(),
  };
  controller.onChange(() => {
    renderSnapshot(snapshotEl, controller, handlers);
    const state = controller.currentState;
    if (state) {
      renderSeries(constraintsEl, state.series, "constraints");
      renderSeries(distanceEl, state.series, "distance");
    }
  });
  await controller.refresh();
  return controller;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app") as HTMLElement);
}
