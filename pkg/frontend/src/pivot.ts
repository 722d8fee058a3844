// Indicator pivot: resolve a hash or entity id, render its neighborhood as
// an interactive SVG graph, expand one hop per click.

import type { ApiClient } from "./api.js";
import { EntityGraph, KIND_COLORS, runLayout, shortId } from "./graph.js";
import { escapeHtml } from "./feed.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export class PivotView {
  private readonly api: ApiClient;
  private readonly root: HTMLElement;
  readonly graph = new EntityGraph();
  private seedId: string | null = null;
  private message = "";

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
  }

  mount(): void {
    this.render();
  }

  /** Seed from a hash (resolved via the query endpoint) or an entity id. */
  async seed(input: string): Promise<void> {
    const trimmed = input.trim();
    if (!trimmed) return;
    this.message = "";
    let entityId: string | null = trimmed.includes("--") ? trimmed : null;
    if (!entityId) {
      entityId = await this.api.resolveHash(trimmed);
    }
    if (!entityId) {
      this.message = "no intelligence for that value";
      this.render();
      return;
    }
    try {
      await this.expand(entityId, 2);
      this.seedId = entityId;
    } catch {
      this.message = "no intelligence for that value";
    }
    this.render();
  }

  /** Pull `depth` hops around one entity into the graph (monotonic). */
  async expand(entityId: string, depth = 1): Promise<void> {
    const triples = await this.api.neighborhood(entityId, depth);
    this.graph.merge(triples);
    this.graph.markExpanded(entityId);
    runLayout(this.graph);
    this.render();
  }

  get emptyMessage(): string {
    return this.message;
  }

  private render(): void {
    const { nodes, edges } = this.graph.size();
    this.root.innerHTML = `
      <div class="toolbar">
        <input data-role="seed" size="70"
               placeholder="sha256 hash or entity id (e.g. malware--wannacry-fixture)" />
        <button data-role="pivot">pivot</button>
        <span class="sub">${nodes} entities, ${edges} links — click a node to expand</span>
      </div>
      ${this.message ? `<div class="empty" data-role="empty">${escapeHtml(this.message)}</div>` : ""}
      <div data-role="canvas" class="pivot-canvas"></div>
      <div data-role="legend" class="legend"></div>`;
    const seedInput = this.root.querySelector('[data-role="seed"]') as HTMLInputElement;
    this.root.querySelector('[data-role="pivot"]')
      ?.addEventListener("click", () => void this.seed(seedInput.value));
    seedInput.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key === "Enter") void this.seed(seedInput.value);
    });
    this.renderSvg();
    this.renderLegend();
  }

  private renderSvg(): void {
    const canvas = this.root.querySelector('[data-role="canvas"]') as HTMLElement;
    if (this.graph.nodes.size === 0) return;
    const nodes = [...this.graph.nodes.values()];
    const pad = 60;
    const minX = Math.min(...nodes.map((n) => n.x)) - pad;
    const maxX = Math.max(...nodes.map((n) => n.x)) + pad;
    const minY = Math.min(...nodes.map((n) => n.y)) - pad;
    const maxY = Math.max(...nodes.map((n) => n.y)) + pad;

    const svg = document.createElementNS(SVG_NS, "svg");
    svg.setAttribute("viewBox", `${minX} ${minY} ${maxX - minX} ${maxY - minY}`);
    svg.setAttribute("class", "pivot-svg");

    for (const edge of this.graph.edges) {
      const a = this.graph.nodes.get(edge.source)!;
      const b = this.graph.nodes.get(edge.target)!;
      const line = document.createElementNS(SVG_NS, "line");
      line.setAttribute("x1", String(a.x));
      line.setAttribute("y1", String(a.y));
      line.setAttribute("x2", String(b.x));
      line.setAttribute("y2", String(b.y));
      line.setAttribute("class", "edge");
      const title = document.createElementNS(SVG_NS, "title");
      title.textContent = edge.predicate;
      line.appendChild(title);
      svg.appendChild(line);
      const label = document.createElementNS(SVG_NS, "text");
      label.setAttribute("x", String((a.x + b.x) / 2));
      label.setAttribute("y", String((a.y + b.y) / 2 - 3));
      label.setAttribute("class", "edge-label");
      label.textContent = edge.predicate;
      svg.appendChild(label);
    }

    for (const node of nodes) {
      const group = document.createElementNS(SVG_NS, "g");
      group.setAttribute("class", "node");
      group.setAttribute("data-id", node.id);
      const circle = document.createElementNS(SVG_NS, "circle");
      circle.setAttribute("cx", String(node.x));
      circle.setAttribute("cy", String(node.y));
      circle.setAttribute("r", node.id === this.seedId ? "14" : "10");
      circle.setAttribute("fill", KIND_COLORS[node.kind] ?? KIND_COLORS.unknown);
      const title = document.createElementNS(SVG_NS, "title");
      title.textContent = `${node.id} (${node.kind})`;
      circle.appendChild(title);
      group.appendChild(circle);
      const text = document.createElementNS(SVG_NS, "text");
      text.setAttribute("x", String(node.x));
      text.setAttribute("y", String(node.y + 24));
      text.setAttribute("class", "node-label");
      text.textContent = node.label.length > 22 ? `${node.label.slice(0, 21)}…` : node.label;
      group.appendChild(text);
      group.addEventListener("click", () => void this.expand(node.id, 1));
      svg.appendChild(group);
    }
    canvas.appendChild(svg);
  }

  private renderLegend(): void {
    const legend = this.root.querySelector('[data-role="legend"]') as HTMLElement;
    legend.innerHTML = this.graph.kindsPresent().map((kind) => `
      <span class="legend-item">
        <span class="swatch" style="background:${KIND_COLORS[kind] ?? KIND_COLORS.unknown}"></span>
        ${escapeHtml(kind)}
      </span>`).join("");
  }
}

export { shortId };
