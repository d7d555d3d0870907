import { beforeEach, describe, expect, it } from "vitest";

import { SessionApi } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import { renderSeries, renderSnapshot } from "../src/render.js";
import { QUERY_FIXTURE, STATE_FIXTURE } from "./fixtures.js";

function controllerWithFixture(): SessionController {
  const controller = new SessionController(new SessionApi("http://x"), "sid");
  // install server state without the network
  (controller as unknown as { query: unknown }).query = structuredClone(QUERY_FIXTURE);
  (controller as unknown as { state: unknown }).state = structuredClone(STATE_FIXTURE);
  return controller;
}

const HANDLERS = {
  onToggle: () => {},
  onSubmit: () => {},
  onAccept: () => {},
};

describe("renderSnapshot", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "<div id='root'></div>";
    root = document.getElementById("root") as HTMLElement;
  });

  it("draws one visual cluster per proposed group", () => {
    renderSnapshot(root, controllerWithFixture(), HANDLERS);
    const groups = root.querySelectorAll(".group");
    expect(groups).toHaveLength(3);
    const counts = [...groups].map((g) => g.querySelectorAll(".item").length);
    expect(counts).toEqual([3, 3, 4]);
  });

  it("matches the fixture's group structure exactly", () => {
    renderSnapshot(root, controllerWithFixture(), HANDLERS);
    const rendered = [...root.querySelectorAll(".group")].map((g) =>
      [...g.querySelectorAll(".item")].map((el) =>
        Number((el as HTMLElement).dataset.itemId),
      ),
    );
    expect(rendered).toEqual(QUERY_FIXTURE.groups);
  });

  it("always offers an accept control", () => {
    renderSnapshot(root, controllerWithFixture(), HANDLERS);
    expect(root.querySelector("button.accept")).not.toBeNull();
  });

  it("arms cannot-link for same-group selections", () => {
    const controller = controllerWithFixture();
    controller.toggleSelect(2);
    controller.toggleSelect(5);
    renderSnapshot(root, controller, HANDLERS);
    const submit = root.querySelector("button.submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(false);
    expect(submit.textContent).toContain("cannot link");
    expect(controller.armedCorrection()).toEqual({ items: [2, 5], same: false });
  });

  it("arms must-link for cross-group selections", () => {
    const controller = controllerWithFixture();
    controller.toggleSelect(2);
    controller.toggleSelect(21);
    renderSnapshot(root, controller, HANDLERS);
    const submit = root.querySelector("button.submit") as HTMLButtonElement;
    expect(submit.textContent).toContain("must link");
    expect(controller.armedCorrection()).toEqual({ items: [2, 21], same: true });
  });

  it("disables submit until two items are selected", () => {
    const controller = controllerWithFixture();
    controller.toggleSelect(2);
    renderSnapshot(root, controller, HANDLERS);
    const submit = root.querySelector("button.submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
    expect(controller.armedCorrection()).toBeNull();
  });

  it("shows computing and converged notices", () => {
    const controller = controllerWithFixture();
    (controller as unknown as { query: unknown }).query = {
      status: "computing",
      step: 3,
    };
    renderSnapshot(root, controller, HANDLERS);
    expect(root.textContent).toContain("computing");
    (controller as unknown as { query: unknown }).query = {
      status: "converged",
      step: 7,
    };
    renderSnapshot(root, controller, HANDLERS);
    expect(root.textContent).toContain("converged");
  });
});

describe("renderSeries", () => {
  it("plots one point per diagnostics entry and skips nulls", () => {
    document.body.innerHTML = "<div id='c'></div>";
    const el = document.getElementById("c") as HTMLElement;
    renderSeries(el, STATE_FIXTURE.series, "distance");
    const svg = el.querySelector("svg") as SVGElement;
    expect(svg.dataset.points).toBe("2");
    renderSeries(
      el,
      [{ step: 0, constraints: null, distance: null, uncertainty: null }],
      "distance",
    );
    expect((el.querySelector("svg") as SVGElement).dataset.points).toBe("0");
  });
});
