import { describe, expect, it } from "vitest";

import { buildCanvas } from "../src/canvas.js";
import type { ValidationReport } from "../src/types.js";
import { fixture } from "./fixtures.js";

const brokenYaml = fixture<{ yaml: string }>("canvas/workflow-broken.json").yaml;
const brokenReport = fixture<ValidationReport>("canvas/report-broken.json");
const fixedYaml = fixture<{ yaml: string }>("canvas/workflow-fixed.json").yaml;
const fixedReport = fixture<ValidationReport>("canvas/report-fixed.json");

const MISMATCH = "embed.out->project.matrix";

describe("canvas edge rendering", () => {
  it("renders the mismatched edge red", () => {
    const canvas = buildCanvas(brokenYaml, brokenReport);
    const edge = canvas.edges.find((e) => e.id === MISMATCH);
    expect(edge).toBeDefined();
    expect(edge!.status).toBe("invalid");
    expect(edge!.color).toBe("red");
    expect(canvas.valid).toBe(false);
  });

  it("shows the field-path diagnostic on hover", () => {
    const canvas = buildCanvas(brokenYaml, brokenReport);
    const edge = canvas.edges.find((e) => e.id === MISMATCH)!;
    expect(edge.hoverMessage).toBeTruthy();
    expect(edge.hoverMessage).toContain("type-mismatch");
    expect(edge.hoverMessage).toContain(MISMATCH);
    // both sides of the renamed field appear as paths in the message
    expect(edge.hoverMessage).toContain("values");
    expect(edge.hoverMessage).toContain("vectors");
  });

  it("renders every compatible edge green", () => {
    const canvas = buildCanvas(brokenYaml, brokenReport);
    for (const edge of canvas.edges.filter((e) => e.id !== MISMATCH)) {
      expect(edge.color).toBe("green");
      expect(edge.status).toBe("valid");
      expect(edge.hoverMessage).toBeNull();
    }
  });

  it("renders all edges green once the adapter fixes the workflow", () => {
    const canvas = buildCanvas(fixedYaml, fixedReport);
    expect(canvas.valid).toBe(true);
    expect(canvas.edges.length).toBeGreaterThan(0);
    expect(canvas.edges.find((e) => e.id === MISMATCH)).toBeUndefined();
    for (const edge of canvas.edges) {
      expect(edge.color).toBe("green");
      expect(edge.hoverMessage).toBeNull();
    }
    // the adapter node appears on the canvas
    expect(canvas.nodes.some((n) => n.kind === "adapter")).toBe(true);
  });

  it("surfaces node parameters as configuration knobs", () => {
    const canvas = buildCanvas(brokenYaml, brokenReport);
    const extract = canvas.nodes.find((n) => n.id === "extract")!;
    const knob = extract.knobs.find((k) => k.name === "max_keywords")!;
    expect(knob.binding).toBe("literal");
    expect(knob.value).toBe(12);
  });

  it("derives status solely from the report, not the document", () => {
    // the same broken document with a clean report renders green: validity
    // is the API's call, never the canvas's
    const clean: ValidationReport = { valid: true, errors: [], warnings: [] };
    const canvas = buildCanvas(brokenYaml, clean);
    for (const edge of canvas.edges) expect(edge.color).toBe("green");
  });
});
