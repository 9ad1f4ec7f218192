// Five-layer validation report view model.

import type { ValidationIssue, ValidationReport } from "./types.js";

export const LAYER_ORDER = ["conceptual", "semantical", "syntactic", "dynamic", "technical"];

export const HIL_INTER_SITE_EXPLANATION =
  "Latency across sites can break a hardware device's real-time window and " +
  "destabilize the power interface loop, so the HIL coupling should stay " +
  "inside one platform; stretch only simulation-to-simulation links between sites.";

export interface LayerSummary {
  layer: string;
  errors: number;
  warnings: number;
  issues: ValidationIssue[];
}

export function summarizeReport(report: ValidationReport): LayerSummary[] {
  return LAYER_ORDER.map((layer) => {
    const issues = report.layers[layer] ?? [];
    return {
      layer,
      errors: issues.filter((i) => i.severity === "error").length,
      warnings: issues.filter((i) => i.severity === "warning").length,
      issues,
    };
  });
}

export function explanationFor(issue: ValidationIssue): string | null {
  return issue.code === "hil-inter-site" ? HIL_INTER_SITE_EXPLANATION : null;
}

export function allGreen(report: ValidationReport): boolean {
  return summarizeReport(report).every((layer) => layer.errors === 0 && layer.warnings === 0);
}
