// HTML-string renderers. Pure functions of the view model so they can be
// unit-tested without a browser; main.ts assigns their output to innerHTML.

import { ActionShort, WhatifPayload } from "./protocol";
import { ACTION_LABELS, COMPOUND_COLORS, ConsoleViewModel } from "./viewmodel";

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderScBanner(vm: ConsoleViewModel): string {
  if (vm.scStatus === "full") {
    return `<div class="banner banner-sc" data-sc="full">SAFETY CAR DEPLOYED</div>`;
  }
  if (vm.scStatus === "virtual") {
    return `<div class="banner banner-vsc" data-sc="virtual">VIRTUAL SAFETY CAR</div>`;
  }
  return "";
}

export function renderHeader(vm: ConsoleViewModel): string {
  const status = vm.terminal ? "FINISHED" : `Lap ${vm.lap} / ${vm.totalLaps}`;
  return `<div class="header"><span class="track">${esc(vm.track)}</span>` +
    `<span class="lap-counter" data-lap="${vm.lap}">${status}</span></div>` +
    renderScBanner(vm);
}

export function renderOrderTable(vm: ConsoleViewModel): string {
  const rows = vm.cars
    .map((car) => {
      const dot = `<span class="tyre-dot" style="background:${COMPOUND_COLORS[car.compound]}"></span>`;
      const cls = car.controlled ? ` class="controlled"` : "";
      return `<tr${cls} data-car="${car.car_id}">` +
        `<td>${car.position}</td>` +
        `<td>${car.controlled ? "OUR CAR" : `Car ${car.car_id}`}</td>` +
        `<td>${dot}${car.compound}</td>` +
        `<td>${car.tyre_age}</td>` +
        `<td data-gap-leader="${car.gap_to_leader}">${car.position === 1 ? "—" : "+" + car.gap_to_leader.toFixed(3)}</td>` +
        `<td>${car.gap_ahead.toFixed(3)}</td>` +
        `<td>${car.pit_count}</td></tr>`;
    })
    .join("");
  return `<table class="order-table"><thead><tr>` +
    `<th>Pos</th><th>Car</th><th>Tyre</th><th>Age</th>` +
    `<th>Gap Leader</th><th>Gap Ahead</th><th>Stops</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderRecommendation(vm: ConsoleViewModel): string {
  const rec = vm.recommendation;
  if (!rec) return `<div class="panel panel-recommendation empty">No recommendation yet</div>`;
  const entries = Object.entries(rec.q_values) as [ActionShort, number][];
  const maxAbs = Math.max(...entries.map(([, q]) => Math.abs(q)), 1e-9);
  const bars = entries
    .map(([action, q]) => {
      const width = Math.round((Math.abs(q) / maxAbs) * 100);
      const best = action === rec.action ? " best" : "";
      return `<div class="q-row${best}" data-action="${action}" data-q="${q}">` +
        `<span class="q-label">${ACTION_LABELS[action]}</span>` +
        `<span class="q-bar" style="width:${width}%"></span>` +
        `<span class="q-value">${q.toFixed(1)}</span></div>`;
    })
    .join("");
  return `<div class="panel panel-recommendation" data-recommended="${rec.action}">` +
    `<h3>Recommendation: ${ACTION_LABELS[rec.action]}</h3>${bars}</div>`;
}

export function renderAttribution(vm: ConsoleViewModel): string {
  const att = vm.attribution;
  if (!att) return "";
  const entries = Object.entries(att.values).sort(
    (a, b) => Math.abs(b[1]) - Math.abs(a[1])
  );
  const maxAbs = Math.max(...entries.map(([, v]) => Math.abs(v)), 1e-9);
  const bars = entries
    .map(([group, value]) => {
      const width = Math.round((Math.abs(value) / maxAbs) * 100);
      const sign = value >= 0 ? "pos" : "neg";
      return `<div class="attr-row" data-group="${esc(group)}" data-value="${value}">` +
        `<span class="attr-label">${esc(group)}</span>` +
        `<span class="attr-bar ${sign}" style="width:${width}%"></span>` +
        `<span class="attr-value">${value >= 0 ? "+" : ""}${value.toFixed(2)}</span></div>`;
    })
    .join("");
  return `<div class="panel panel-attribution" data-mode="${att.mode}">` +
    `<h3>Why ${ACTION_LABELS[att.chosen_action]}? ` +
    `(Q ${att.explained_output.toFixed(1)}, base ${att.base_value.toFixed(1)})</h3>` +
    `${bars}</div>`;
}

export function renderDecisionPath(vm: ConsoleViewModel): string {
  const path = vm.decisionPath;
  if (!path) return "";
  const items = path.predicates
    .map(
      (p, i) =>
        `<li class="path-step" data-formal="${esc(p.formal)}">` +
        `<span class="step-no">${i + 1}.</span>` +
        `<span class="step-display">${esc(p.display)}</span>` +
        `<code class="step-formal">${esc(p.formal)}</code></li>`
    )
    .join("");
  return `<div class="panel panel-path" data-action="${path.action}">` +
    `<h3>Decision path &rarr; ${ACTION_LABELS[path.action]}</h3>` +
    `<ol>${items}</ol></div>`;
}

export function renderCounterfactual(vm: ConsoleViewModel): string {
  const cf = vm.counterfactual;
  if (!cf) return "";
  const changes = cf.changes
    .map(
      (c) =>
        `<li data-feature="${esc(c.feature)}">${esc(c.feature)}: ` +
        `${c.before.toFixed(3)} &rarr; ${c.after.toFixed(3)}</li>`
    )
    .join("");
  const notes = cf.feasibility.map((n) => `<li class="note">${esc(n)}</li>`).join("");
  return `<div class="panel panel-counterfactual" data-target="${cf.target}">` +
    `<h3>To get ${ACTION_LABELS[cf.target]} (${cf.norm} distance ${cf.distance.toFixed(4)})</h3>` +
    `<ul>${changes}</ul>${notes ? `<ul class="notes">${notes}</ul>` : ""}</div>`;
}

function renderDistribution(w: WhatifPayload): string {
  const total = Object.values(w.finish_distribution).reduce((a, b) => a + b, 0);
  const rows = Object.entries(w.finish_distribution)
    .map(([pos, count]) => {
      const width = Math.round((count / Math.max(total, 1)) * 100);
      return `<div class="dist-row" data-pos="${pos}" data-count="${count}">` +
        `<span>P${pos}</span><span class="dist-bar" style="width:${width}%"></span>` +
        `<span>${count}</span></div>`;
    })
    .join("");
  return `<div class="whatif-column" data-action="${w.action}" data-mean="${w.mean_finish}">` +
    `<h4>${ACTION_LABELS[w.action]} (mean P${w.mean_finish.toFixed(2)}, n=${w.n})</h4>` +
    `${rows}</div>`;
}

export function renderWhatif(vm: ConsoleViewModel): string {
  if (vm.whatifs.length === 0) return "";
  return `<div class="panel panel-whatif">` +
    `<h3>What-if</h3><div class="whatif-columns">` +
    `${vm.whatifs.map(renderDistribution).join("")}</div></div>`;
}

export function renderErrorBox(vm: ConsoleViewModel): string {
  if (!vm.pending.lastError) return "";
  return `<div class="error-box" role="alert">${esc(vm.pending.lastError)}</div>`;
}

export function renderTimeline(vm: ConsoleViewModel): string {
  if (vm.timeline.length === 0) return "";
  const items = vm.timeline
    .map((e) => `<li data-lap="${e.lap}">Lap ${e.lap}: ${esc(e.text)}</li>`)
    .join("");
  return `<div class="panel panel-timeline"><h3>Events</h3><ul>${items}</ul></div>`;
}

export function renderConsole(vm: ConsoleViewModel): string {
  return [
    renderHeader(vm),
    renderErrorBox(vm),
    renderOrderTable(vm),
    renderRecommendation(vm),
    renderAttribution(vm),
    renderDecisionPath(vm),
    renderCounterfactual(vm),
    renderWhatif(vm),
    renderTimeline(vm),
  ].join("\n");
}
