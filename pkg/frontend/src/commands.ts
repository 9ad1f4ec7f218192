// Command-panel gating and client-side set-value validation.
// The UI renders controls only for granted kinds; the hub re-checks anyway
// (defense in depth), so a forged request still dies server-side.

import type { TopicInfo } from "./types.js";

export const COMMAND_LABELS: Record<string, string> = {
  start_experiment: "Start experiment",
  stop_experiment: "Stop experiment",
  set_value: "Set value",
  query_trace: "Query trace",
  get_status: "Get status",
  list_resources: "List resources",
};

export function visibleCommands(granted: string[]): string[] {
  return Object.keys(COMMAND_LABELS).filter((kind) => granted.includes(kind));
}

export interface SetValueCheck {
  ok: boolean;
  reason?: string;
}

export function validateSetValue(
  topic: string,
  value: string,
  topics: TopicInfo[],
): SetValueCheck {
  const entry = topics.find((t) => t.name === topic);
  if (!entry) {
    return { ok: false, reason: `unknown topic ${topic}` };
  }
  if (entry.kind !== "setpoint") {
    return { ok: false, reason: `${topic} is not a setpoint` };
  }
  const parsed = Number(value);
  if (value.trim() === "" || Number.isNaN(parsed) || !Number.isFinite(parsed)) {
    return { ok: false, reason: `value ${JSON.stringify(value)} is not numeric` };
  }
  return { ok: true };
}

export function setpointTopics(topics: TopicInfo[]): TopicInfo[] {
  return topics.filter((t) => t.kind === "setpoint");
}
