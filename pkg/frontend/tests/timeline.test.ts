import { describe, expect, it } from "vitest";

import {
  buildTimeline,
  HEADER_X,
  minimapClickTime,
  pan,
} from "../src/timeline.js";
import type { Issue, Page, ViewPayload } from "../src/types.js";
import { fixture } from "./fixtures.js";

const zl0 = fixture<ViewPayload>("provenance/view-zl0.json");
const zl1 = fixture<ViewPayload>("provenance/view-zl1.json");
const zl2 = fixture<ViewPayload>("provenance/view-zl2.json");
const zl3 = fixture<ViewPayload>("provenance/view-zl3.json");
const issues = fixture<Page<Issue>>("board/issues.json").items;

describe("semantic zoom", () => {
  it("ZL0 shows only parent-issue nodes", () => {
    const view = buildTimeline(zl0);
    expect(view.markers.length).toBeGreaterThan(0);
    const parentIds = new Set(
      issues.filter((i) => i.parent === null).map((i) => i.id),
    );
    for (const marker of view.markers) {
      expect(marker.kind).toBe("group");
      if (marker.kind === "group") {
        expect(parentIds.has(marker.issue)).toBe(true);
        expect(marker.count).toBeGreaterThan(0);
      }
    }
  });

  it("a correction event at ZL1 renders the inverted-triangle glyph", () => {
    const view = buildTimeline(zl1);
    const corrections = view.markers.filter(
      (m) => m.kind === "event" && m.eventKind === "correction",
    );
    expect(corrections.length).toBeGreaterThan(0);
    for (const marker of corrections) {
      expect(marker.kind).toBe("event");
      if (marker.kind === "event") expect(marker.shape).toBe("triangle-down");
    }
  });

  it("ZL1 markers carry no detail card; ZL2 markers do", () => {
    const first = buildTimeline(zl1).markers.find((m) => m.kind === "event");
    expect(first?.kind === "event" && first.card).toBeFalsy();
    for (const marker of buildTimeline(zl2).markers) {
      if (marker.kind === "event") {
        expect(marker.card).toBeTruthy();
        expect(marker.card!.actorName.length).toBeGreaterThan(0);
      }
    }
  });
});

describe("pinned lane headers", () => {
  it("headers keep their position while the content pans", () => {
    let view = buildTimeline(zl1);
    const before = view.headers.map((h) => ({ key: h.key, x: h.x, y: h.y }));
    view = pan(view, 250);
    view = pan(view, -90);
    expect(view.contentOffsetX).toBe(-160);
    expect(view.headers.map((h) => ({ key: h.key, x: h.x, y: h.y }))).toEqual(
      before,
    );
    for (const header of view.headers) {
      expect(header.pinned).toBe(true);
      expect(header.x).toBe(HEADER_X);
    }
  });

  it("lane order is the API's order: user, nexus, squad leads, ADUs", () => {
    const keys = buildTimeline(zl1).headers.map((h) => h.key);
    expect(keys[0]).toBe("user");
    expect(keys[1]).toBe("nexus");
    const slIndex = keys.findIndex((k) => k.startsWith("sl:"));
    const aduIndex = keys.findIndex((k) => k.startsWith("adu:"));
    expect(slIndex).toBeGreaterThan(1);
    expect(aduIndex).toBeGreaterThan(slIndex);
  });
});

describe("minimap and colors", () => {
  it("minimap density sums to the event total", () => {
    expect(zl1.minimap).toHaveLength(200);
    const total = zl1.minimap.reduce((a, b) => a + b, 0);
    const zl1Events = buildTimeline(zl1).markers.length;
    // full-range view: every logged event appears once
    expect(total).toBe(zl1Events);
  });

  it("minimap click maps to a time inside the log range", () => {
    expect(minimapClickTime(0.5, 100, 300)).toBe(200);
    expect(minimapClickTime(-2, 100, 300)).toBe(100);
    expect(minimapClickTime(9, 100, 300)).toBe(300);
  });

  it("an actor's color is identical across zoom levels", () => {
    const colorAt = (view: ViewPayload) => {
      const colors = new Map<number, string>();
      for (const node of view.nodes) {
        if ("id" in node) colors.set(node.id, node.color);
      }
      return colors;
    };
    const a = colorAt(zl1);
    const b = colorAt(zl2);
    const c = colorAt(zl3);
    for (const [id, color] of a) {
      expect(b.get(id)).toBe(color);
      expect(c.get(id)).toBe(color);
    }
  });
});
