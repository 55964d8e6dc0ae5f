/**
 * Workflow canvas view-model.
 *
 * The canvas never decides validity itself: every edge's status is derived
 * solely from the last ValidationReport fetched from the API, and every edit
 * round-trips through the API's workflow model. This module only turns the
 * (document, report) pair the API returned into render instructions.
 */

import { load } from "js-yaml";

import type {
  Diagnostic,
  ValidationError,
  ValidationReport,
  WorkflowDoc,
} from "./types.js";

export type EdgeColor = "green" | "red";

export interface EdgeView {
  /** "from.port->to.field", the same location key the API reports on. */
  id: string;
  from: string;
  fromPort: string;
  to: string;
  toPort: string;
  status: "valid" | "invalid";
  color: EdgeColor;
  /** Field-path diagnostic shown on hover; null for valid edges. */
  hoverMessage: string | null;
}

export interface ParameterKnob {
  node: string;
  name: string;
  binding: "literal" | "input" | "deferred";
  value: unknown;
}

export interface NodeView {
  id: string;
  kind: string;
  service: string | null;
  knobs: ParameterKnob[];
}

export interface CanvasState {
  workflowId: string;
  revision: number;
  valid: boolean;
  nodes: NodeView[];
  edges: EdgeView[];
}

function edgeLocation(from: string, to: string): string {
  return `${from}->${to}`;
}

function describeSide(expected: string | null, found: string | null): string {
  if (expected !== null && found !== null) {
    return `expected ${expected}, found ${found}`;
  }
  if (expected !== null) {
    return `expected ${expected}, missing on the source side`;
  }
  return `found ${found}, not accepted by the target`;
}

/** Human-readable hover text listing every conflicting field path. */
export function hoverMessageFor(error: ValidationError): string {
  const detail = error.detail as
    | { diagnostics?: Diagnostic[] }
    | null
    | undefined;
  const diags = detail?.diagnostics ?? [];
  if (diags.length === 0) {
    return `${error.kind} at ${error.location}`;
  }
  const parts = diags.map(
    (d) => `${d.path}: ${describeSide(d.expected, d.found)}`,
  );
  return `${error.kind} at ${error.location}: ${parts.join("; ")}`;
}

/** Build the canvas render model from an API workflow document and the
 * API's validation verdict for it. */
export function buildCanvas(
  workflowYaml: string,
  report: ValidationReport,
): CanvasState {
  const doc = load(workflowYaml) as WorkflowDoc;
  const byLocation = new Map<string, ValidationError>();
  for (const err of report.errors) {
    byLocation.set(err.location, err);
  }

  const edges: EdgeView[] = doc.edges.map((e) => {
    const id = edgeLocation(e.from, e.to);
    const error = byLocation.get(id);
    const [from = "", fromPort = ""] = e.from.split(".", 2);
    const [to = "", toPort = ""] = e.to.split(".", 2);
    if (error) {
      return {
        id,
        from,
        fromPort,
        to,
        toPort,
        status: "invalid",
        color: "red",
        hoverMessage: hoverMessageFor(error),
      };
    }
    return {
      id,
      from,
      fromPort,
      to,
      toPort,
      status: "valid",
      color: "green",
      hoverMessage: null,
    };
  });

  const nodes: NodeView[] = doc.nodes.map((n) => ({
    id: n.id,
    kind: n.kind,
    service: n.service,
    knobs: Object.entries(n.params ?? {}).map(([name, binding]) => {
      const b = binding as { kind: ParameterKnob["binding"]; value?: unknown };
      return { node: n.id, name, binding: b.kind, value: b.value ?? null };
    }),
  }));

  return {
    workflowId: doc.id,
    revision: doc.revision,
    valid: report.valid,
    nodes,
    edges,
  };
}

/** Re-derive edge statuses after the API re-validated an edited document. */
export function withReport(
  state: CanvasState,
  workflowYaml: string,
  report: ValidationReport,
): CanvasState {
  return buildCanvas(workflowYaml, report);
}
