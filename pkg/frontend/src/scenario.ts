// What-if scenario runner: override rows validated client-side against the
// registry, an optional survival horizon, and an overlay comparing scenario
// values against the current state. Conflicts come back as a banner listing
// the involved models; the server is never mutated by a scenario run.

import { comparableNumber, formatValue, labelSet, parseOverrideInput } from "./format.js";
import type {
  OverrideRow,
  RegistryRoster,
  TaggedValue,
  WhatIfResponse,
} from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface ScenarioRow {
  attribute: string;
  raw: string;
}

export interface ScenarioParse {
  overrides: OverrideRow[];
  errors: { attribute: string; error: string }[];
}

export function parseScenario(roster: RegistryRoster, rows: ScenarioRow[]): ScenarioParse {
  const byId = new Map(roster.attributes.map((a) => [a.id, a]));
  const overrides: OverrideRow[] = [];
  const errors: { attribute: string; error: string }[] = [];
  for (const row of rows) {
    const descriptor = byId.get(row.attribute);
    if (!descriptor) {
      errors.push({ attribute: row.attribute, error: "not a declared attribute" });
      continue;
    }
    const parsed = parseOverrideInput(descriptor, row.raw);
    if (parsed.ok) {
      overrides.push({ attribute: row.attribute, value: parsed.value });
    } else {
      errors.push({ attribute: row.attribute, error: parsed.error });
    }
  }
  return { overrides, errors };
}

export interface ScenarioFormHandles {
  root: HTMLElement;
  addRow: (attribute?: string, raw?: string) => void;
  read: () => ScenarioParse;
  horizonDays: () => number | null;
  queryAttribute: () => string | null;
}

export function buildScenarioForm(roster: RegistryRoster): ScenarioFormHandles {
  const root = el("form", "scenario-form");
  root.appendChild(el("h3", undefined, "what-if scenario"));
  const rows = el("div", "override-rows");
  root.appendChild(rows);

  const addButton = el("button", "add-row", "add override");
  addButton.type = "button";
  root.appendChild(addButton);

  const survivalAttributes = roster.attributes
    .filter((a) => a.value_kind === "survival_curve" || a.value_kind === "time_to_event_density");
  const horizonWrap = el("label", "horizon-select", "survival horizon (days) ");
  const horizonInput = el("input") as HTMLInputElement;
  horizonInput.type = "number";
  horizonInput.min = "1";
  horizonInput.placeholder = "e.g. 180";
  horizonWrap.appendChild(horizonInput);
  if (survivalAttributes.length) root.appendChild(horizonWrap);

  function addRow(attribute?: string, raw?: string) {
    const row = el("div", "override-row");
    const select = el("select") as HTMLSelectElement;
    for (const attr of roster.attributes) {   // only declared attributes offered
      const option = el("option", undefined, attr.id) as HTMLOptionElement;
      option.value = attr.id;
      select.appendChild(option);
    }
    if (attribute) select.value = attribute;
    const input = el("input", "override-value") as HTMLInputElement;
    input.placeholder = "value";
    if (raw !== undefined) input.value = raw;
    const hint = el("span", "override-hint");
    const updateHint = () => {
      const descriptor = roster.attributes.find((a) => a.id === select.value);
      const labels = descriptor ? labelSet(descriptor) : null;
      hint.textContent = labels ? labels.join(" | ")
        : descriptor?.value_kind === "boolean" ? "yes | no"
        : descriptor?.unit ?? "";
    };
    select.addEventListener("change", updateHint);
    updateHint();
    row.appendChild(select);
    row.appendChild(input);
    row.appendChild(hint);
    rows.appendChild(row);
  }
  addButton.addEventListener("click", () => addRow());

  function read(): ScenarioParse {
    const parsed: ScenarioRow[] = [];
    rows.querySelectorAll(".override-row").forEach((row) => {
      const select = row.querySelector("select") as HTMLSelectElement;
      const input = row.querySelector("input") as HTMLInputElement;
      if (input.value.trim()) parsed.push({ attribute: select.value, raw: input.value });
    });
    return parseScenario(roster, parsed);
  }

  return {
    root,
    addRow,
    read,
    horizonDays: () => {
      const x = Number(horizonInput.value);
      return Number.isFinite(x) && x > 0 ? Math.round(x) : null;
    },
    queryAttribute: () => survivalAttributes.length ? survivalAttributes[0].id : null,
  };
}

export interface OverlayBaseline {
  [attribute: string]: TaggedValue | null;
}

export function renderScenarioResult(response: WhatIfResponse,
                                     baseline: OverlayBaseline): HTMLElement {
  const root = el("div", "scenario-result");

  if (response.report.conflicts.length) {
    const banner = el("div", "conflict-banner");
    banner.appendChild(el("strong", undefined, "conflict: passed back for review"));
    for (const conflict of response.report.conflicts) {
      const entry = el("div", "conflict-entry");
      entry.appendChild(el("span", "conflict-attribute", conflict.attribute));
      entry.appendChild(el("span", "conflict-detail", conflict.detail));
      const involved = el("ul", "conflict-involved");
      for (const model of conflict.involved) {
        involved.appendChild(el("li", undefined, model));
      }
      entry.appendChild(involved);
      banner.appendChild(entry);
    }
    root.appendChild(banner);
  }

  if (response.query_result && response.query_result.probability !== null) {
    const q = response.query_result;
    root.appendChild(el("p", "query-result",
      `${q.attribute} at ${q.horizon_days} days: ${(q.probability! * 100).toFixed(1)}%`));
  }

  const table = el("table", "overlay-table");
  const head = el("tr");
  for (const title of ["attribute", "current", "scenario", "delta"]) {
    head.appendChild(el("th", undefined, title));
  }
  table.appendChild(head);
  const attributes = Object.keys(response.snapshot.attributes).sort();
  for (const attr of attributes) {
    const scenarioState = response.snapshot.attributes[attr];
    const before = baseline[attr] ?? null;
    const after = scenarioState.consensus;
    const beforeNum = comparableNumber(before);
    const afterNum = comparableNumber(after);
    const row = el("tr", "overlay-row");
    row.dataset.attribute = attr;
    row.appendChild(el("td", "overlay-attribute", attr));
    row.appendChild(el("td", undefined, formatValue(before)));
    row.appendChild(el("td", undefined, formatValue(after)));
    const delta = el("td", "overlay-delta");
    if (beforeNum !== null && afterNum !== null && Math.abs(afterNum - beforeNum) > 1e-9) {
      delta.textContent = (afterNum > beforeNum ? "+" : "") + (afterNum - beforeNum).toFixed(4);
      delta.classList.add(afterNum > beforeNum ? "delta-up" : "delta-down");
      row.classList.add("changed");
    } else if (JSON.stringify(before) !== JSON.stringify(after)) {
      delta.textContent = "changed";
      row.classList.add("changed");
    } else {
      delta.textContent = "";
    }
    row.appendChild(delta);
    table.appendChild(row);
  }
  root.appendChild(table);
  return root;
}
