// Scripted end-to-end session against the real service: every rendered value
// must match the server payload it came from, field for field.

import { beforeAll, afterAll, describe, expect, it } from "vitest";

import { SessionClient, ServerRejection } from "../src/client";
import {
  applyExplanation,
  applyRecommendation,
  applySessionState,
  applyWhatif,
  commandFinished,
  ConsoleViewModel,
  emptyViewModel,
} from "../src/viewmodel";
import {
  renderAttribution,
  renderConsole,
  renderDecisionPath,
  renderOrderTable,
  renderRecommendation,
  renderScBanner,
  renderWhatif,
} from "../src/render";
import {
  AttributionPayload,
  DecisionPathPayload,
  SessionStatePayload,
  WhatifPayload,
} from "../src/protocol";
import { ENDPOINT } from "./setup";

let client: SessionClient;
let vm: ConsoleViewModel;
let lastState: SessionStatePayload;

beforeAll(async () => {
  client = new SessionClient(ENDPOINT);
  vm = emptyViewModel();
  const env = await client.create({ track: "BHR", seed: 17, n_cars: 10 });
  lastState = env.payload;
  vm = applySessionState(vm, env.payload);
});

afterAll(async () => {
  await client.end();
});

describe("scripted race session", () => {
  it("creates a session and renders the grid from the payload", () => {
    expect(vm.lap).toBe(0);
    expect(vm.cars).toHaveLength(10);
    const html = renderOrderTable(vm);
    for (const car of lastState.cars) {
      expect(html).toContain(`data-car="${car.car_id}"`);
      expect(html).toContain(`data-gap-leader="${car.gap_to_leader}"`);
    }
    // exactly one controlled row
    expect(html.match(/class="controlled"/g)).toHaveLength(1);
  });

  it("advances five laps, recommendation bars mirror the q_values", async () => {
    for (let i = 0; i < 5; i++) {
      const state = await client.advance(vm.lap);
      lastState = state.payload;
      vm = applySessionState(vm, state.payload);
    }
    expect(vm.lap).toBe(5);
    expect(vm.timeline).toHaveLength(5);

    const rec = await client.recommendation();
    vm = applyRecommendation(vm, rec.payload);
    const html = renderRecommendation(vm);
    expect(html).toContain(`data-recommended="${rec.payload.action}"`);
    for (const [action, q] of Object.entries(rec.payload.q_values)) {
      expect(html).toContain(`data-action="${action}" data-q="${q}"`);
    }
  });

  it("injects a full safety car: banner shown and gaps compressed", async () => {
    const state = await client.inject(vm.lap, "full");
    lastState = state.payload;
    vm = applySessionState(vm, state.payload);
    expect(vm.scStatus).toBe("full");
    expect(renderScBanner(vm)).toContain('data-sc="full"');
    expect(renderConsole(vm)).toContain("SAFETY CAR DEPLOYED");
    for (const car of state.payload.cars) {
      // bunched field: at most the one-second queue interval per position
      expect(car.gap_to_leader).toBeLessThanOrEqual(car.position * 1.0 + 1e-6);
    }
  });

  it("overrides with Pit Hard and sees the compound change", async () => {
    expect(lastState.controlled.availability.hard).toBe(true);
    const state = await client.advance(vm.lap, "ph");
    lastState = state.payload;
    vm = applySessionState(vm, state.payload);
    expect(state.payload.last_advance?.action).toBe("ph");
    expect(state.payload.last_advance?.source).toBe("override");
    expect(state.payload.controlled.compound).toBe("H");
    const ourRow = state.payload.cars.find((c) => c.controlled)!;
    expect(ourRow.compound).toBe("H");
    expect(ourRow.tyre_age).toBe(0);
    expect(vm.timeline[vm.timeline.length - 1].text).toContain("Pit Hard (override)");
  });

  it("renders the attribution panel exactly from the payload", async () => {
    const exp = await client.explain(vm.lap, "attribution", undefined, 200);
    const payload = exp.payload as AttributionPayload;
    vm = applyExplanation(vm, payload);
    const html = renderAttribution(vm);
    for (const [group, value] of Object.entries(payload.values)) {
      expect(html).toContain(`data-group="${group}" data-value="${value}"`);
    }
    expect(html).toContain(`data-mode="${payload.mode}"`);
    expect(html).toContain(payload.explained_output.toFixed(1));
  });

  it("renders the decision path checklist exactly from the payload", async () => {
    const exp = await client.explain(vm.lap, "path");
    const payload = exp.payload as DecisionPathPayload;
    vm = applyExplanation(vm, payload);
    const html = renderDecisionPath(vm);
    const esc = (s: string) =>
      s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
    expect(html).toContain(`data-action="${payload.action}"`);
    for (const pred of payload.predicates) {
      expect(html).toContain(esc(pred.display));
      expect(html).toContain(esc(pred.formal));
    }
  });

  it("shows two what-if distributions side by side", async () => {
    const stay = await client.whatif(vm.lap, "np", 5, 3);
    vm = applyWhatif(vm, stay.payload);
    const pit = await client.whatif(vm.lap, "pm", 5, 3);
    vm = applyWhatif(vm, pit.payload);
    expect(vm.whatifs).toHaveLength(2);
    const html = renderWhatif(vm);
    for (const w of [stay.payload, pit.payload] as WhatifPayload[]) {
      expect(html).toContain(`data-action="${w.action}" data-mean="${w.mean_finish}"`);
      for (const [pos, count] of Object.entries(w.finish_distribution)) {
        expect(html).toContain(`data-pos="${pos}" data-count="${count}"`);
      }
    }
    // purity: the live session is still on the same lap
    const state = await client.state();
    expect(state.lap).toBe(vm.lap);
  });

  it("rejects a stale-lap advance and surfaces the reason inline", async () => {
    let rejection: ServerRejection | null = null;
    try {
      await client.advance(vm.lap - 1);
    } catch (err) {
      rejection = err as ServerRejection;
    }
    expect(rejection).not.toBeNull();
    expect(rejection!.stale).toBe(true);
    vm = commandFinished(vm, rejection!.reason);
    expect(renderConsole(vm)).toContain(rejection!.reason);
    const state = await client.state();
    expect(state.lap).toBe(vm.lap);
  });

  it("rejects an unavailable-compound override with no state change", async () => {
    // hard was just used; a second hard set may exist, so burn sets until gone
    let state = await client.state();
    while (state.payload.controlled.availability.hard && !state.payload.terminal) {
      const next = await client.advance(state.payload.lap,
        state.payload.controlled.availability.hard ? "ph" : undefined);
      state = next;
      vm = applySessionState(vm, next.payload);
    }
    if (state.payload.terminal) return; // ran out of race before sets
    let rejection: ServerRejection | null = null;
    try {
      await client.advance(state.payload.lap, "ph");
    } catch (err) {
      rejection = err as ServerRejection;
    }
    expect(rejection).not.toBeNull();
    expect(rejection!.reason).toContain("hard");
    const after = await client.state();
    expect(after.lap).toBe(state.payload.lap);
  });
});
