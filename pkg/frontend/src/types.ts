// Shared shapes of the hub API surface.

export interface TraceRecord {
  sim_time_ns: number;
  topic: string;
  value: number | boolean | string;
  unit: string;
  quality: "good" | "stale" | "estimated" | "bad";
  source: string;
  seq: number;
  wall_time_ns: number;
}

export interface StreamEnvelope {
  v: number;
  type: string;
  session: string;
  seq: number;
  sim_time_ns: number;
  payload: { records?: TraceRecord[] };
}

export interface TopicInfo {
  name: string;
  kind: "measurement" | "setpoint" | "status";
  unit: string;
}

export interface Resources {
  sites: string[];
  participants: string[];
  topics: TopicInfo[];
  commands: string[];
}

export interface SessionInfo {
  operator: string;
  site: string;
  granted_commands: string[];
}

export interface ValidationIssue {
  severity: "error" | "warning";
  code: string;
  message: string;
  location: string;
}

export interface ValidationReport {
  valid: boolean;
  layers: Record<string, ValidationIssue[]>;
}

export interface RunStatus {
  run_id?: string;
  state: string;
  sim_time_ns?: number;
  rows?: number;
}
