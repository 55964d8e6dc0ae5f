/**
 * Provenance timeline view-model: swimlanes with pinned headers, semantic
 * zoom, axis-break marks, and a corner minimap.
 *
 * Zoom payloads come straight from the API; this module only lays them out.
 * Panning moves the content surface, never the lane header column, which is
 * what keeps the headers pinned on screen.
 */

import type { EventNode, GroupNode, Lane, ViewPayload } from "./types.js";

export const LANE_HEIGHT = 48;
export const HEADER_X = 0;

export type MarkerShape = "dot" | "triangle-down";

export interface LaneHeader {
  key: string;
  label: string;
  /** Screen x of the header column; constant across pans. */
  x: number;
  y: number;
  pinned: boolean;
}

export interface GroupMarker {
  kind: "group";
  issue: string;
  count: number;
  start: number;
  end: number;
}

export interface EventMarker {
  kind: "event";
  eventId: number;
  lane: number;
  x: number;
  y: number;
  color: string;
  shape: MarkerShape;
  eventKind: string;
  card: { actorName: string; summary: string; timestamp: number } | null;
  pills: { kind: string; target: string }[];
}

export type Marker = GroupMarker | EventMarker;

export interface TimelineView {
  zoom: ViewPayload["zoom"];
  headers: LaneHeader[];
  /** Horizontal scroll of the content surface; headers ignore it. */
  contentOffsetX: number;
  markers: Marker[];
  axisBreaks: number[];
  minimap: number[];
}

function laneLabel(key: string): string {
  if (key === "user") return "You";
  if (key === "nexus") return "Nexus";
  if (key.startsWith("sl:")) return `Squad Lead ${key.slice(3)}`;
  const [, aduType = "", instance = ""] = key.split(":");
  return `${aduType} ADU #${instance}`;
}

export function markerShape(glyph: EventNode["glyph"]): MarkerShape {
  return glyph === "inverted-triangle" ? "triangle-down" : "dot";
}

function isGroup(node: GroupNode | EventNode): node is GroupNode {
  return "issue" in node;
}

export function buildTimeline(view: ViewPayload): TimelineView {
  const headers: LaneHeader[] = view.lanes.map((lane: Lane) => ({
    key: lane.key,
    label: laneLabel(lane.key),
    x: HEADER_X,
    y: lane.index * LANE_HEIGHT,
    pinned: lane.pinned,
  }));

  const markers: Marker[] = view.nodes.map((node) => {
    if (isGroup(node)) {
      return {
        kind: "group",
        issue: node.issue,
        count: node.count,
        start: node.start,
        end: node.end,
      } satisfies GroupMarker;
    }
    return {
      kind: "event",
      eventId: node.id,
      lane: node.lane,
      x: node.x,
      y: node.lane * LANE_HEIGHT + LANE_HEIGHT / 2,
      color: node.color,
      shape: markerShape(node.glyph),
      eventKind: node.kind,
      card: node.card
        ? {
            actorName: node.card.actor_name,
            summary: node.card.summary,
            timestamp: node.card.timestamp,
          }
        : null,
      pills: node.pills ?? [],
    } satisfies EventMarker;
  });

  return {
    zoom: view.zoom,
    headers,
    contentOffsetX: 0,
    markers,
    axisBreaks: view.time_scale.axis_breaks,
    minimap: view.minimap,
  };
}

/** Pan the content surface by dx pixels. Headers stay where they are. */
export function pan(view: TimelineView, dx: number): TimelineView {
  return { ...view, contentOffsetX: view.contentOffsetX - dx };
}

/**
 * A click at `fraction` (0..1) of the minimap maps to a timestamp within
 * [logStart, logEnd]; the caller recenters the viewport there.
 */
export function minimapClickTime(
  fraction: number,
  logStart: number,
  logEnd: number,
): number {
  const f = Math.min(1, Math.max(0, fraction));
  return logStart + f * (logEnd - logStart);
}
