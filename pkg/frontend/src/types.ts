/** Payload shapes of the REST API the console consumes. */

export interface Diagnostic {
  path: string;
  expected: string | null;
  found: string | null;
}

export interface ValidationError {
  kind: string;
  location: string;
  detail: { compatible: boolean; diagnostics: Diagnostic[] } | unknown;
}

export interface ValidationReport {
  valid: boolean;
  errors: ValidationError[];
  warnings: ValidationError[];
}

export interface WorkflowDoc {
  id: string;
  name: string;
  revision: number;
  validation_mode: string;
  inputs: { name: string; type: string }[];
  required_tags: string[];
  nodes: WorkflowNode[];
  edges: { from: string; to: string }[];
  outputs: { node: string; path: string; name: string }[];
}

export interface WorkflowNode {
  id: string;
  kind: string;
  service: string | null;
  endpoint: [string, string] | null;
  params: Record<string, { kind: string; value?: unknown }>;
  [extra: string]: unknown;
}

export interface Lane {
  key: string;
  index: number;
  pinned: boolean;
}

export interface TimeScale {
  segments: [number, number, number, number][];
  axis_breaks: number[];
}

/** ZL0 aggregates events per parent issue; ZL1+ carry individual events. */
export interface GroupNode {
  issue: string;
  count: number;
  start: number;
  end: number;
}

export interface EventNode {
  id: number;
  lane: number;
  x: number;
  color: string;
  glyph: "circle" | "inverted-triangle";
  kind: string;
  card?: { actor_name: string; summary: string; timestamp: number };
  pills?: { kind: string; target: string }[];
}

export interface ViewPayload {
  zoom: "ZL0" | "ZL1" | "ZL2" | "ZL3";
  lanes: Lane[];
  time_scale: TimeScale;
  minimap: number[];
  edges: { from: number; to: number; kind: string; label: string }[];
  nodes: (GroupNode | EventNode)[];
}

export interface Issue {
  id: string;
  title: string;
  parent: string | null;
  status: string;
  agent_type: string;
  branch: string | null;
  attachments: number;
  criteria: string[];
  dependencies: string[];
  ordinal: number;
}

export interface Task {
  id: string;
  issue: string;
  adu_type: string;
  state: string;
  phase: string;
  branch: string;
  locks: string[];
  requeue_count: number;
}

export interface Page<T> {
  items: T[];
  next_cursor: string | null;
}
