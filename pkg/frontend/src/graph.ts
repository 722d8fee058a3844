// Entity graph model + a small force-directed layout (no dependencies).

import type { TripleRow } from "./types.js";

export interface GraphNode {
  id: string;
  kind: string;
  label: string;
  x: number;
  y: number;
}

export interface GraphEdge {
  source: string;
  target: string;
  predicate: string;
}

export const KIND_COLORS: Record<string, string> = {
  Malware: "#d64545",
  MalwareFamily: "#e07b39",
  Indicator: "#c9a227",
  ThreatActor: "#8e44ad",
  Campaign: "#b5179e",
  CourseOfAction: "#2a9d8f",
  Vulnerability: "#e76f51",
  SoftwareEntry: "#4895ef",
  AttackPattern: "#f4a261",
  Infrastructure: "#577590",
  Target: "#90be6d",
  Motivation: "#43aa8b",
  unknown: "#7f8c8d",
};

export class EntityGraph {
  readonly nodes = new Map<string, GraphNode>();
  readonly edges: GraphEdge[] = [];
  private readonly edgeKeys = new Set<string>();
  private readonly expanded = new Set<string>();

  /** Merge a neighborhood result; growth is monotonic. */
  merge(triples: TripleRow[]): void {
    const kinds = new Map<string, string>();
    const names = new Map<string, string>();
    for (const triple of triples) {
      if (triple.predicate === "kind" && triple.literal) {
        kinds.set(triple.subject, String(triple.object));
      } else if (triple.predicate === "name" && triple.literal) {
        names.set(triple.subject, String(triple.object));
      }
    }
    for (const triple of triples) {
      this.ensureNode(triple.subject, kinds.get(triple.subject), names.get(triple.subject));
      if (!triple.literal) {
        const target = String(triple.object);
        this.ensureNode(target, kinds.get(target), names.get(target));
        const key = `${triple.subject}|${triple.predicate}|${target}`;
        if (!this.edgeKeys.has(key)) {
          this.edgeKeys.add(key);
          this.edges.push({ source: triple.subject, target, predicate: triple.predicate });
        }
      }
    }
  }

  markExpanded(id: string): void {
    this.expanded.add(id);
  }

  isExpanded(id: string): boolean {
    return this.expanded.has(id);
  }

  size(): { nodes: number; edges: number } {
    return { nodes: this.nodes.size, edges: this.edges.length };
  }

  kindsPresent(): string[] {
    return [...new Set([...this.nodes.values()].map((n) => n.kind))].sort();
  }

  private ensureNode(id: string, kind?: string, name?: string): void {
    const existing = this.nodes.get(id);
    if (existing) {
      if (kind && existing.kind === "unknown") existing.kind = kind;
      if (name && existing.label === shortId(id)) existing.label = name;
      return;
    }
    // deterministic initial placement on a spiral keeps the layout stable
    const index = this.nodes.size;
    const angle = index * 2.399963; // golden angle
    const radius = 30 + 18 * Math.sqrt(index);
    this.nodes.set(id, {
      id,
      kind: kind ?? "unknown",
      label: name ?? shortId(id),
      x: Math.cos(angle) * radius,
      y: Math.sin(angle) * radius,
    });
  }
}

export function shortId(id: string): string {
  const split = id.indexOf("--");
  return split >= 0 ? id.slice(split + 2) : id;
}

/** Run `ticks` of a spring/repulsion layout over the graph in place.
 * Deterministic apart from coincident-node jitter; small graphs settle in
 * well under the default tick budget. */
export function runLayout(graph: EntityGraph, ticks = 250): void {
  const nodes = [...graph.nodes.values()];
  if (nodes.length <= 1) return;
  const ideal = 110; // preferred edge length in px
  for (let tick = 0; tick < ticks; tick += 1) {
    const temperature = 12 * (1 - tick / ticks) + 0.5;
    const dispX = new Map<string, number>();
    const dispY = new Map<string, number>();
    for (const node of nodes) {
      dispX.set(node.id, 0);
      dispY.set(node.id, 0);
    }
    for (let i = 0; i < nodes.length; i += 1) {
      for (let j = i + 1; j < nodes.length; j += 1) {
        const a = nodes[i];
        const b = nodes[j];
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        if (dx === 0 && dy === 0) {
          dx = Math.random() - 0.5;
          dy = Math.random() - 0.5;
        }
        const dist = Math.max(Math.hypot(dx, dy), 0.1);
        const repulse = (ideal * ideal) / dist / dist;
        dispX.set(a.id, dispX.get(a.id)! + (dx / dist) * repulse * ideal * 0.08);
        dispY.set(a.id, dispY.get(a.id)! + (dy / dist) * repulse * ideal * 0.08);
        dispX.set(b.id, dispX.get(b.id)! - (dx / dist) * repulse * ideal * 0.08);
        dispY.set(b.id, dispY.get(b.id)! - (dy / dist) * repulse * ideal * 0.08);
      }
    }
    for (const edge of graph.edges) {
      const a = graph.nodes.get(edge.source)!;
      const b = graph.nodes.get(edge.target)!;
      const dx = b.x - a.x;
      const dy = b.y - a.y;
      const dist = Math.max(Math.hypot(dx, dy), 0.1);
      const attract = ((dist - ideal) / ideal) * 2.0;
      dispX.set(a.id, dispX.get(a.id)! + (dx / dist) * attract);
      dispY.set(a.id, dispY.get(a.id)! + (dy / dist) * attract);
      dispX.set(b.id, dispX.get(b.id)! - (dx / dist) * attract);
      dispY.set(b.id, dispY.get(b.id)! - (dy / dist) * attract);
    }
    for (const node of nodes) {
      // gentle centering keeps disconnected parts on screen
      let dx = dispX.get(node.id)! - node.x * 0.01;
      let dy = dispY.get(node.id)! - node.y * 0.01;
      const magnitude = Math.hypot(dx, dy);
      if (magnitude > temperature) {
        dx = (dx / magnitude) * temperature;
        dy = (dy / magnitude) * temperature;
      }
      node.x += dx;
      node.y += dy;
    }
  }
}
