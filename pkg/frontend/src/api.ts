// Typed client of the hub HTTP API. Every console capability is one of
// these calls; there is nothing the console can do that the API cannot.

import type { Resources, RunStatus, SessionInfo, TraceRecord, ValidationReport } from "./types.js";

export class HubApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export interface Credentials {
  site?: string;
  token?: string;
}

export class HubClient {
  constructor(
    private baseUrl: string = "",
    private credentials: Credentials = {},
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.credentials.site) headers["X-Site"] = this.credentials.site;
    if (this.credentials.token) headers["X-Token"] = this.credentials.token;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const data = text ? JSON.parse(text) : {};
    if (!response.ok) {
      throw new HubApiError(response.status, data.error ?? "HttpError", data.detail ?? text);
    }
    return data as T;
  }

  resources(): Promise<Resources> {
    return this.request("GET", "/api/v1/resources");
  }

  session(): Promise<SessionInfo> {
    return this.request("GET", "/api/v1/session");
  }

  scenarios(): Promise<{ scenarios: string[] }> {
    return this.request("GET", "/api/v1/scenarios");
  }

  startRun(experiment: unknown, options: { mode?: string; seed?: number; pace?: number } = {}): Promise<{ run_id: string }> {
    return this.request("POST", "/api/v1/runs", { experiment, ...options });
  }

  status(runId: string): Promise<RunStatus> {
    return this.request("GET", `/api/v1/runs/${runId}/status`);
  }

  command(runId: string, kind: string, args: Record<string, unknown> = {}): Promise<{ ok: boolean; data: unknown }> {
    return this.request("POST", `/api/v1/runs/${runId}/commands`, { kind, args });
  }

  trace(runId: string, topic = "*", fromNs?: number, toNs?: number): Promise<{ records: TraceRecord[] }> {
    const params = new URLSearchParams({ run: runId, topic });
    if (fromNs !== undefined) params.set("from_ns", String(fromNs));
    if (toNs !== undefined) params.set("to_ns", String(toNs));
    return this.request("GET", `/api/v1/trace?${params.toString()}`);
  }

  validate(experiment: unknown): Promise<ValidationReport> {
    return this.request("POST", "/api/v1/validate", { experiment });
  }
}
