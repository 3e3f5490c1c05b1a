// Attribute detail panel: current value with its error, status badge,
// history timeline, provenance chain, and per-model impact bars.

import { formatValue, statusBadge } from "./format.js";
import type { AttributeReport, ProblemDocument } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderAttributePanel(report: AttributeReport): HTMLElement {
  const panel = el("section", "attribute-panel");
  panel.appendChild(el("h2", "panel-title", report.attribute));

  const state = report.state;
  if (state.status === "unknown" && !state.history.length) {
    panel.appendChild(el("p", "empty-state",
      "No value yet: no measurement has arrived and no model could fill it in."));
    return panel;
  }

  const headline = el("div", "consensus");
  headline.appendChild(el("span", "consensus-value", formatValue(state.consensus)));
  headline.appendChild(el("span", `badge badge-${state.status}`,
    statusBadge(state.status)));
  panel.appendChild(headline);

  const impact = el("div", "impact");
  impact.appendChild(el("h3", undefined, "model impact"));
  if (report.impact.pinned) {
    impact.appendChild(el("p", "pinned-note",
      report.impact.note ?? "external input; model proposals discarded"));
  } else {
    const entries = Object.entries(report.impact.entries)
      .sort((a, b) => a[0].localeCompare(b[0]));
    if (!entries.length) {
      impact.appendChild(el("p", "empty-state", "no model proposals yet"));
    }
    const scale = Math.max(
      0.05, ...entries.map(([, e]) => Math.abs(e.delta ?? 0)));
    for (const [model, entry] of entries) {
      const row = el("div", "impact-row");
      row.appendChild(el("span", "impact-model", model));
      const bar = el("div", "impact-bar");
      bar.dataset.model = model;
      if (entry.sole_source) {
        bar.classList.add("sole-source");
        bar.textContent = "sole source";
      } else if (entry.delta === null) {
        bar.classList.add("undefined");
        bar.textContent = "n/a";
      } else {
        const span = Math.abs(entry.delta) / scale;
        bar.classList.add(entry.delta >= 0 ? "positive" : "negative");
        bar.style.width = `${Math.max(2, Math.round(span * 120))}px`;
        bar.title = entry.delta.toFixed(4);
        row.appendChild(el("span", "impact-delta",
          (entry.delta >= 0 ? "+" : "") + entry.delta.toFixed(3)));
      }
      row.insertBefore(bar, row.querySelector(".impact-delta"));
      impact.appendChild(row);
    }
  }
  panel.appendChild(impact);

  const provenance = el("div", "provenance");
  provenance.appendChild(el("h3", undefined, "provenance chain"));
  const chain = el("ol", "provenance-chain");
  for (const token of report.provenance) {
    const [kind, id] = token.split(":", 2);
    chain.appendChild(el("li", `signature signature-${kind}`, id));
  }
  provenance.appendChild(chain);
  panel.appendChild(provenance);

  const history = el("div", "history");
  history.appendChild(el("h3", undefined, "history"));
  const list = el("ul", "history-list");
  for (const entry of state.history) {
    const item = el("li", "history-entry");
    item.dataset.eventSeq = String(entry.event_seq);
    item.appendChild(el("span", "history-time", entry.t));
    item.appendChild(el("span", "history-value", formatValue(entry.consensus)));
    item.appendChild(el("span", `badge badge-${entry.status}`,
      statusBadge(entry.status)));
    const detail = el("div", "history-provenance");
    detail.hidden = true;
    for (const token of entry.provenance) {
      const [kind, id] = token.split(":", 2);
      detail.appendChild(el("span", `signature signature-${kind}`, id));
    }
    item.appendChild(detail);
    item.addEventListener("click", () => {
      const was = item.classList.contains("selected");
      list.querySelectorAll(".history-entry.selected").forEach((other) => {
        other.classList.remove("selected");
        (other.querySelector(".history-provenance") as HTMLElement).hidden = true;
      });
      if (!was) {
        item.classList.add("selected");
        detail.hidden = false;
      }
    });
    list.appendChild(item);
  }
  history.appendChild(list);
  panel.appendChild(history);
  return panel;
}

export function renderProblem(problem: ProblemDocument): HTMLElement {
  const box = el("div", "problem-document");
  box.appendChild(el("strong", "problem-code", problem.code));
  box.appendChild(el("span", "problem-message", problem.message));
  if (problem.detail !== undefined && problem.detail !== null) {
    box.appendChild(el("pre", "problem-detail", JSON.stringify(problem.detail, null, 2)));
  }
  return box;
}
