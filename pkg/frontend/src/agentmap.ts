/**
 * Agent map view-model: one room per parent issue, agent markers with a
 * status accent, and per-room merge progress. Renders whatever the issue
 * and task lists last returned; no client-side state machine.
 */

import type { Issue, Task } from "./types.js";

export type StatusAccent =
  | "in-development"
  | "blocked"
  | "queued"
  | "in-review";

export interface AgentMarker {
  taskId: string;
  issueId: string;
  aduType: string;
  accent: StatusAccent | null;
  phase: string;
}

export interface Room {
  issueId: string;
  title: string;
  agents: AgentMarker[];
  /** merged children / total children, 0..1. */
  mergeProgress: number;
  childTotal: number;
  childCompleted: number;
}

const ISSUE_ACCENTS: Record<string, StatusAccent> = {
  "in-development": "in-development",
  blocked: "blocked",
  queued: "queued",
  "in-review": "in-review",
};

function accentFor(issue: Issue | undefined): StatusAccent | null {
  if (!issue) return null;
  return ISSUE_ACCENTS[issue.status] ?? null;
}

export function buildAgentMap(issues: Issue[], tasks: Task[]): Room[] {
  const byId = new Map(issues.map((i) => [i.id, i]));
  const parents = issues.filter((i) => i.parent === null);

  return parents.map((parent) => {
    const children = issues.filter((i) => i.parent === parent.id);
    const childIds = new Set(children.map((c) => c.id));
    const agents: AgentMarker[] = tasks
      .filter((t) => childIds.has(t.issue) || t.issue === parent.id)
      .map((t) => ({
        taskId: t.id,
        issueId: t.issue,
        aduType: t.adu_type,
        accent: accentFor(byId.get(t.issue)),
        phase: t.phase,
      }));
    const completed = children.filter((c) => c.status === "completed").length;
    return {
      issueId: parent.id,
      title: parent.title,
      agents,
      mergeProgress: children.length ? completed / children.length : 0,
      childTotal: children.length,
      childCompleted: completed,
    };
  });
}
