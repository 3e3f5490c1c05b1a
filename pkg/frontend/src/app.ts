// Dashboard bootstrap: wires the graph view, the attribute panel, and the
// scenario form to the twin service. Single-user session; the view refetches
// after every mutation instead of keeping a push channel.

import { ApiError, TwinClient } from "./api.js";
import { renderGraph } from "./graph.js";
import { renderAttributePanel, renderProblem } from "./panel.js";
import { buildScenarioForm, renderScenarioResult, type OverlayBaseline } from "./scenario.js";
import type { GraphSnapshot, RegistryRoster } from "./types.js";

interface AppState {
  client: TwinClient;
  patient: string;
  roster: RegistryRoster;
  snapshot: GraphSnapshot;
  selected: string | null;
}

function currentValues(snapshot: GraphSnapshot): OverlayBaseline {
  const baseline: OverlayBaseline = {};
  for (const node of snapshot.nodes) {
    if (node.kind === "attribute") baseline[node.id] = node.value ?? null;
  }
  return baseline;
}

export async function startApp(root: HTMLElement): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8000";
  const token = params.get("token") ?? undefined;
  const patient = params.get("patient") ?? "demo";
  const client = new TwinClient(base, token);

  const roster = await client.getRegistry();
  let snapshot: GraphSnapshot;
  try {
    snapshot = await client.getGraph(patient);
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      snapshot = await client.createPatient(patient);
    } else {
      throw error;
    }
  }
  const state: AppState = { client, patient, roster, snapshot, selected: null };

  root.textContent = "";
  const graphPane = document.createElement("div");
  graphPane.className = "pane graph-pane";
  const detailPane = document.createElement("div");
  detailPane.className = "pane detail-pane";
  const scenarioPane = document.createElement("div");
  scenarioPane.className = "pane scenario-pane";
  root.append(graphPane, detailPane, scenarioPane);

  const form = buildScenarioForm(roster);
  form.addRow();
  const runButton = document.createElement("button");
  runButton.type = "button";
  runButton.className = "run-scenario";
  runButton.textContent = "run scenario";
  const resultHost = document.createElement("div");
  resultHost.className = "scenario-result-host";
  scenarioPane.append(form.root, runButton, resultHost);

  async function refreshGraph() {
    state.snapshot = await state.client.getGraph(state.patient);
    graphPane.textContent = "";
    graphPane.appendChild(renderGraph(state.snapshot, {
      selected: state.selected,
      onSelectAttribute: (attr) => { void showAttribute(attr); },
      onToggleModel: (model, enable) => { void toggleModel(model, enable); },
    }));
  }

  async function showAttribute(attr: string) {
    state.selected = attr;
    detailPane.textContent = "";
    try {
      const report = await state.client.getAttribute(state.patient, attr);
      detailPane.appendChild(renderAttributePanel(report));
    } catch (error) {
      if (error instanceof ApiError) {
        detailPane.appendChild(renderProblem(error.problem));
      } else {
        throw error;
      }
    }
    await refreshGraph();
  }

  async function toggleModel(model: string, enable: boolean) {
    try {
      await state.client.setModelEnabled(state.patient, model, enable);
    } catch (error) {
      if (error instanceof ApiError) {
        detailPane.textContent = "";
        detailPane.appendChild(renderProblem(error.problem));
        return;
      }
      throw error;
    }
    await refreshGraph();
    if (state.selected) await showAttribute(state.selected);
  }

  runButton.addEventListener("click", async () => {
    resultHost.textContent = "";
    const parsed = form.read();
    if (parsed.errors.length) {
      for (const issue of parsed.errors) {
        resultHost.appendChild(renderProblem({
          code: "invalid_override",
          message: `${issue.attribute}: ${issue.error}`,
        }));
      }
      return;
    }
    const horizon = form.horizonDays();
    const queryAttr = form.queryAttribute();
    const query = horizon && queryAttr
      ? { attribute: queryAttr, horizon_days: horizon }
      : undefined;
    try {
      const response = await state.client.whatIf(state.patient, parsed.overrides, query);
      resultHost.appendChild(renderScenarioResult(response, currentValues(state.snapshot)));
    } catch (error) {
      if (error instanceof ApiError) {
        resultHost.appendChild(renderProblem(error.problem));
        return;
      }
      throw error;
    }
  });

  await refreshGraph();
}

declare global {
  interface Window { twingraphDashboard?: { start: typeof startApp } }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.twingraphDashboard = { start: startApp };
  void startApp(document.getElementById("app")!);
}
