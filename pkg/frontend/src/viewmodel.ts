// Console view model: plain data derived one-for-one from server payloads.
// Nothing in here simulates; it only reshapes and annotates what the server
// sent so the renderer stays a dumb template.

import {
  ActionShort,
  AttributionPayload,
  CarRow,
  CounterfactualPayload,
  DecisionPathPayload,
  RecommendationPayload,
  SessionStatePayload,
  WhatifPayload,
} from "./protocol";

export const ACTION_LABELS: Record<ActionShort, string> = {
  np: "No Pit",
  ps: "Pit Soft",
  pm: "Pit Medium",
  ph: "Pit Hard",
};

export const COMPOUND_COLORS: Record<string, string> = {
  S: "#da291c",
  M: "#ffd12e",
  H: "#f0f0ec",
};

export interface TimelineEntry {
  lap: number;
  text: string;
}

export interface PendingState {
  inFlight: boolean;
  lastError: string | null;
}

export interface ConsoleViewModel {
  lap: number;
  totalLaps: number;
  track: string;
  scStatus: string;
  terminal: boolean;
  cars: CarRow[];
  controlled: SessionStatePayload["controlled"];
  recommendation: RecommendationPayload | null;
  attribution: AttributionPayload | null;
  decisionPath: DecisionPathPayload | null;
  counterfactual: CounterfactualPayload | null;
  whatifs: WhatifPayload[];
  pending: PendingState;
  timeline: TimelineEntry[];
}

export function emptyViewModel(): ConsoleViewModel {
  return {
    lap: 0,
    totalLaps: 0,
    track: "",
    scStatus: "none",
    terminal: false,
    cars: [],
    controlled: {
      position: 0,
      compound: "S",
      valid_finish: false,
      availability: { soft: false, medium: false, hard: false },
    },
    recommendation: null,
    attribution: null,
    decisionPath: null,
    counterfactual: null,
    whatifs: [],
    pending: { inFlight: false, lastError: null },
    timeline: [],
  };
}

export function applySessionState(
  vm: ConsoleViewModel,
  payload: SessionStatePayload
): ConsoleViewModel {
  const next = { ...vm };
  next.lap = payload.lap;
  next.totalLaps = payload.total_laps;
  next.track = payload.track;
  next.scStatus = payload.sc_status;
  next.terminal = payload.terminal;
  next.cars = payload.cars.slice().sort((a, b) => a.position - b.position);
  next.controlled = payload.controlled;
  // a new lap invalidates lap-scoped panels
  if (payload.lap !== vm.lap) {
    next.recommendation = null;
    next.attribution = null;
    next.decisionPath = null;
    next.counterfactual = null;
    next.whatifs = [];
  }
  if (payload.last_advance) {
    const a = payload.last_advance;
    next.timeline = vm.timeline.concat({
      lap: a.lap,
      text: `${ACTION_LABELS[a.action]} (${a.source})`,
    });
  }
  return next;
}

export function applyRecommendation(
  vm: ConsoleViewModel,
  payload: RecommendationPayload
): ConsoleViewModel {
  return { ...vm, recommendation: payload };
}

export function applyExplanation(
  vm: ConsoleViewModel,
  payload: AttributionPayload | DecisionPathPayload | CounterfactualPayload
): ConsoleViewModel {
  const next = { ...vm };
  if (payload.method === "attribution") next.attribution = payload;
  else if (payload.method === "path") next.decisionPath = payload;
  else next.counterfactual = payload;
  return next;
}

export function applyWhatif(
  vm: ConsoleViewModel,
  payload: WhatifPayload
): ConsoleViewModel {
  // keep at most two distributions for the side-by-side panel
  const whatifs = vm.whatifs.filter((w) => w.action !== payload.action);
  whatifs.push(payload);
  return { ...vm, whatifs: whatifs.slice(-2) };
}

export function commandStarted(vm: ConsoleViewModel): ConsoleViewModel {
  return { ...vm, pending: { inFlight: true, lastError: null } };
}

export function commandFinished(
  vm: ConsoleViewModel,
  error: string | null = null
): ConsoleViewModel {
  return { ...vm, pending: { inFlight: false, lastError: error } };
}
