// Browser wiring: one session, strictly sequential commands, controls
// disabled while a command is in flight. Endpoint comes from the page URL
// (?endpoint=...) or defaults to the page origin.

import { SessionClient, ServerRejection } from "./client";
import { renderConsole } from "./render";
import {
  applyExplanation,
  applyRecommendation,
  applySessionState,
  applyWhatif,
  commandFinished,
  commandStarted,
  ConsoleViewModel,
  emptyViewModel,
} from "./viewmodel";
import { ActionShort, ExplanationPayload } from "./protocol";

const params = new URLSearchParams(window.location.search);
const endpoint = params.get("endpoint") ?? window.location.origin;
const client = new SessionClient(endpoint);

let vm: ConsoleViewModel = emptyViewModel();
const root = document.getElementById("console-root")!;

function draw(): void {
  root.innerHTML = renderConsole(vm);
  document
    .querySelectorAll<HTMLButtonElement>("#controls button")
    .forEach((b) => (b.disabled = vm.pending.inFlight || vm.terminal));
}

async function command(run: () => Promise<void>): Promise<void> {
  if (vm.pending.inFlight) return;
  vm = commandStarted(vm);
  draw();
  try {
    await run();
    vm = commandFinished(vm);
  } catch (err) {
    const reason =
      err instanceof ServerRejection ? err.reason : String(err);
    vm = commandFinished(vm, reason);
  }
  draw();
}

async function refreshRecommendation(): Promise<void> {
  const rec = await client.recommendation();
  vm = applyRecommendation(vm, rec.payload);
}

async function start(): Promise<void> {
  await command(async () => {
    const state = await client.create({ track: "BHR", seed: Date.now() % 100000 });
    vm = applySessionState(vm, state.payload);
    await refreshRecommendation();
  });
}

function wireControls(): void {
  const actions: [string, () => Promise<void>][] = [
    ["btn-advance", async () => {
      const state = await client.advance(vm.lap);
      vm = applySessionState(vm, state.payload);
      if (!vm.terminal) await refreshRecommendation();
    }],
    ["btn-sc", async () => {
      const state = await client.inject(vm.lap, "full");
      vm = applySessionState(vm, state.payload);
    }],
    ["btn-vsc", async () => {
      const state = await client.inject(vm.lap, "virtual");
      vm = applySessionState(vm, state.payload);
    }],
    ["btn-attribution", async () => {
      const exp = await client.explain(vm.lap, "attribution");
      vm = applyExplanation(vm, exp.payload as ExplanationPayload);
    }],
    ["btn-path", async () => {
      const exp = await client.explain(vm.lap, "path");
      vm = applyExplanation(vm, exp.payload as ExplanationPayload);
    }],
  ];
  for (const [id, run] of actions) {
    document.getElementById(id)?.addEventListener("click", () => command(run));
  }
  for (const action of ["np", "ps", "pm", "ph"] as ActionShort[]) {
    document.getElementById(`btn-override-${action}`)?.addEventListener("click", () =>
      command(async () => {
        const state = await client.advance(vm.lap, action);
        vm = applySessionState(vm, state.payload);
        if (!vm.terminal) await refreshRecommendation();
      })
    );
    document.getElementById(`btn-whatif-${action}`)?.addEventListener("click", () =>
      command(async () => {
        const w = await client.whatif(vm.lap, action, 20);
        vm = applyWhatif(vm, w.payload);
      })
    );
  }
}

wireControls();
void start();
