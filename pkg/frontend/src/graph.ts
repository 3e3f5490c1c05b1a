// Node-link view of the knowledge graph: layered left to right so the
// reading order follows the clinical flow (inputs -> intermediates ->
// outcomes). Renders exactly the snapshot it is given, nothing else.

import { formatValue } from "./format.js";
import type { GraphNode, GraphSnapshot } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

// Longest-path layering; back edges in flagged cycles are simply not allowed
// to push a node further right forever (sweeps are capped by the node count).
export function computeLayers(snapshot: GraphSnapshot): Map<string, number> {
  const layer = new Map<string, number>();
  const incoming = new Map<string, string[]>();
  for (const node of snapshot.nodes) {
    layer.set(node.id, 0);
    incoming.set(node.id, []);
  }
  for (const edge of snapshot.edges) {
    incoming.get(edge.to)?.push(edge.from);
  }
  for (let sweep = 0; sweep < snapshot.nodes.length; sweep++) {
    let moved = false;
    for (const edge of snapshot.edges) {
      const source = layer.get(edge.from) ?? 0;
      const target = layer.get(edge.to) ?? 0;
      if (target < source + 1) {
        layer.set(edge.to, source + 1);
        moved = true;
      }
    }
    if (!moved) break;
  }
  return layer;
}

export interface GraphViewOptions {
  onSelectAttribute?: (attr: string) => void;
  onToggleModel?: (model: string, enabled: boolean) => void;
  selected?: string | null;
}

export function renderGraph(snapshot: GraphSnapshot,
                            options: GraphViewOptions = {}): SVGSVGElement {
  const layers = computeLayers(snapshot);
  const columns = new Map<number, GraphNode[]>();
  for (const node of snapshot.nodes) {
    const column = layers.get(node.id) ?? 0;
    if (!columns.has(column)) columns.set(column, []);
    columns.get(column)!.push(node);
  }
  const columnWidth = 190;
  const rowHeight = 64;
  const positions = new Map<string, { x: number; y: number }>();
  let maxRows = 1;
  for (const [column, nodes] of [...columns.entries()].sort((a, b) => a[0] - b[0])) {
    nodes.sort((a, b) => a.id.localeCompare(b.id));
    nodes.forEach((node, row) => {
      positions.set(node.id, { x: 90 + column * columnWidth, y: 50 + row * rowHeight });
    });
    maxRows = Math.max(maxRows, nodes.length);
  }

  const svg = document.createElementNS(SVG_NS, "svg");
  const width = 180 + columnWidth * columns.size;
  const height = 60 + rowHeight * maxRows;
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  svg.setAttribute("class", "graph-view");

  for (const edge of snapshot.edges) {
    const from = positions.get(edge.from);
    const to = positions.get(edge.to);
    if (!from || !to) continue;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(from.x));
    line.setAttribute("y1", String(from.y));
    line.setAttribute("x2", String(to.x));
    line.setAttribute("y2", String(to.y));
    line.setAttribute("class", "graph-edge");
    svg.appendChild(line);
  }

  const disabled = new Set(snapshot.nodes
    .filter((n) => n.kind === "model" && n.enabled === false)
    .map((n) => n.id));

  for (const node of snapshot.nodes) {
    const pos = positions.get(node.id)!;
    const group = document.createElementNS(SVG_NS, "g");
    const classes = ["graph-node", `kind-${node.kind}`];
    if (node.kind === "attribute") classes.push(`status-${node.status ?? "unknown"}`);
    if (disabled.has(node.id)) classes.push("disabled");
    if (snapshot.cycles.includes(node.id)) classes.push("on-cycle");
    if (options.selected === node.id) classes.push("selected");
    group.setAttribute("class", classes.join(" "));
    group.setAttribute("data-node-id", node.id);
    group.setAttribute("transform", `translate(${pos.x}, ${pos.y})`);

    if (node.kind === "attribute") {
      const circle = document.createElementNS(SVG_NS, "circle");
      circle.setAttribute("r", "14");
      group.appendChild(circle);
      if (node.value) {
        const badge = document.createElementNS(SVG_NS, "text");
        badge.setAttribute("class", "value-badge");
        badge.setAttribute("y", "30");
        badge.setAttribute("text-anchor", "middle");
        badge.textContent = formatValue(node.value);
        group.appendChild(badge);
      }
      group.addEventListener("click", () => options.onSelectAttribute?.(node.id));
    } else {
      const rect = document.createElementNS(SVG_NS, "rect");
      rect.setAttribute("x", "-16");
      rect.setAttribute("y", "-12");
      rect.setAttribute("width", "32");
      rect.setAttribute("height", "24");
      group.appendChild(rect);
      group.addEventListener("click", () =>
        options.onToggleModel?.(node.id, disabled.has(node.id)));
    }

    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("class", "node-label");
    label.setAttribute("y", "-20");
    label.setAttribute("text-anchor", "middle");
    label.textContent = node.id;
    group.appendChild(label);
    svg.appendChild(group);
  }
  return svg;
}
