// Wire protocol types. Every response is a versioned envelope; the client
// renders payload fields verbatim and never computes race numbers itself.

export const PROTOCOL_VERSION = 1;

export type MessageType =
  | "SessionState"
  | "Recommendation"
  | "Explanation"
  | "Whatif"
  | "EndSession"
  | "Error";

export interface Envelope<P> {
  protocol_version: number;
  type: MessageType;
  session_id: string | null;
  lap: number | null;
  payload: P;
}

export type ActionShort = "np" | "ps" | "pm" | "ph";
export type CompoundShort = "S" | "M" | "H";
export type ScStatus = "none" | "virtual" | "full";

export interface CarRow {
  car_id: number;
  position: number;
  compound: CompoundShort;
  tyre_age: number;
  cumulative_time: number;
  gap_ahead: number;
  gap_behind: number;
  gap_to_leader: number;
  pit_count: number;
  controlled: boolean;
}

export interface ControlledSummary {
  position: number;
  compound: CompoundShort;
  valid_finish: boolean;
  availability: { soft: boolean; medium: boolean; hard: boolean };
}

export interface AdvanceResult {
  lap: number;
  action: ActionShort;
  source: "agent" | "override";
  reward: number;
  done: boolean;
  finish_position?: number;
  strategy?: string;
  failed?: boolean;
}

export interface SessionStatePayload {
  lap: number;
  total_laps: number;
  track: string;
  sc_status: ScStatus;
  terminal: boolean;
  mode: string;
  cars: CarRow[];
  controlled: ControlledSummary;
  last_advance?: AdvanceResult;
}

export interface RecommendationPayload {
  lap: number;
  action: ActionShort;
  q_values: Record<ActionShort, number>;
}

export interface AttributionPayload {
  lap: number;
  method: "attribution";
  values: Record<string, number>;
  base_value: number;
  explained_output: number;
  chosen_action: ActionShort;
  mode: "exact" | "sampling";
  n_samples: number;
}

export interface PathPredicate {
  formal: string;
  display: string;
}

export interface DecisionPathPayload {
  lap: number;
  method: "path";
  action: ActionShort;
  predicates: PathPredicate[];
}

export interface CounterfactualChange {
  feature: string;
  before: number;
  after: number;
  delta: number;
}

export interface CounterfactualPayload {
  lap: number;
  method: "counterfactual";
  target: ActionShort;
  distance: number;
  norm: string;
  changes: CounterfactualChange[];
  feasibility: string[];
}

export type ExplanationPayload =
  | AttributionPayload
  | DecisionPathPayload
  | CounterfactualPayload;

export interface WhatifPayload {
  lap: number;
  action: ActionShort;
  n: number;
  finish_distribution: Record<string, number>;
  mean_finish: number;
}

export interface ErrorPayload {
  reason: string;
}
