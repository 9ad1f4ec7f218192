import { describe, expect, it } from "vitest";

import { allGreen, explanationFor, summarizeReport, HIL_INTER_SITE_EXPLANATION } from "../src/report.js";
import { parseEnvelope } from "../src/stream.js";
import { pathFor, scaleOf } from "../src/plot.js";
import type { ValidationReport } from "../src/types.js";

const REPORT: ValidationReport = {
  valid: false,
  layers: {
    conceptual: [],
    semantical: [],
    syntactic: [],
    dynamic: [{ severity: "error", code: "zero-delay-cycle", message: "a->b->a", location: "routes" }],
    technical: [{ severity: "warning", code: "hil-inter-site", message: "route couples HIL", location: "routes[0]" }],
  },
};

describe("report view model", () => {
  it("groups issues by layer with severity counts", () => {
    const summary = summarizeReport(REPORT);
    expect(summary.map((s) => s.layer)).toEqual([
      "conceptual", "semantical", "syntactic", "dynamic", "technical",
    ]);
    const dynamic = summary.find((s) => s.layer === "dynamic")!;
    expect(dynamic.errors).toBe(1);
    expect(dynamic.warnings).toBe(0);
  });

  it("explains the intra-platform rule for hil-inter-site", () => {
    const issue = REPORT.layers.technical[0];
    expect(explanationFor(issue)).toBe(HIL_INTER_SITE_EXPLANATION);
    expect(explanationFor(REPORT.layers.dynamic[0])).toBeNull();
  });

  it("reports all-green only with zero issues everywhere", () => {
    expect(allGreen(REPORT)).toBe(false);
    expect(allGreen({ valid: true, layers: {} })).toBe(true);
  });
});

describe("stream envelope parsing", () => {
  it("round-trips a stream envelope", () => {
    const text = JSON.stringify({
      v: 1, type: "stream", session: "hub", seq: 4, sim_time_ns: 10,
      payload: { records: [] },
    });
    expect(parseEnvelope(text).seq).toBe(4);
  });

  it("rejects wrong protocol versions", () => {
    expect(() => parseEnvelope(JSON.stringify({ v: 2, type: "stream" }))).toThrow();
  });
});

describe("plot path generation", () => {
  it("scales points into the viewport", () => {
    const points = [
      { t_ns: 0, value: 0 },
      { t_ns: 100, value: 1 },
    ];
    const path = pathFor(points, 100, 100);
    expect(path).toBe("M0.0,100.0 L100.0,0.0");
  });

  it("handles constant series without dividing by zero", () => {
    const points = [
      { t_ns: 0, value: 5 },
      { t_ns: 10, value: 5 },
    ];
    const scale = scaleOf(points);
    expect(scale.vMax).toBeGreaterThan(scale.vMin);
    expect(pathFor(points, 10, 10)).toContain("M0.0,5.0");
  });

  it("returns an empty path for no data", () => {
    expect(pathFor([], 100, 100)).toBe("");
  });
});
