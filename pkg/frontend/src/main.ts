// Console wiring: live view, command panel, validation report.

import { HubClient, HubApiError } from "./api.js";
import { TopicBuffers } from "./buffer.js";
import { COMMAND_LABELS, setpointTopics, validateSetValue, visibleCommands } from "./commands.js";
import { pathFor } from "./plot.js";
import { explanationFor, summarizeReport } from "./report.js";
import { StreamClient } from "./stream.js";
import type { Resources, SessionInfo, ValidationReport } from "./types.js";

const buffers = new TopicBuffers();
let client = new HubClient();
let session: SessionInfo | null = null;
let resources: Resources | null = null;
let currentRun: string | null = null;
let selectedTopic: string | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setBanner(text: string, kind: "ok" | "warn" | "err"): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = text;
  banner.className = `banner ${kind}`;
}

function renderTable(): void {
  const body = el<HTMLTableSectionElement>("table-body");
  body.innerHTML = "";
  for (const row of buffers.tableRows()) {
    const tr = document.createElement("tr");
    if (row.stale) tr.className = "stale";
    const value = typeof row.value === "number" ? row.value.toFixed(3) : String(row.value);
    tr.innerHTML =
      `<td>${row.topic}</td><td>${value}</td><td>${row.unit}</td>` +
      `<td class="q-${row.quality}">${row.quality}${row.stale ? " &#9888;" : ""}</td>` +
      `<td>${(row.sim_time_ns / 1e6).toFixed(0)} ms</td>`;
    tr.onclick = () => {
      selectedTopic = row.topic;
    };
    body.appendChild(tr);
  }
}

function renderPlot(): void {
  const topic = selectedTopic ?? buffers.topics()[0];
  if (!topic) return;
  el<HTMLElement>("plot-title").textContent = topic;
  const path = el<SVGPathElement & HTMLElement>("plot-path");
  path.setAttribute("d", pathFor(buffers.points(topic), 800, 240));
}

function renderCommands(): void {
  const panel = el<HTMLDivElement>("command-buttons");
  panel.innerHTML = "";
  if (!session) return;
  for (const kind of visibleCommands(session.granted_commands)) {
    if (kind === "set_value") continue; // has its own form
    const button = document.createElement("button");
    button.textContent = COMMAND_LABELS[kind];
    button.onclick = () => issueCommand(kind);
    panel.appendChild(button);
  }
  const form = el<HTMLFormElement>("setvalue-form");
  form.style.display = session.granted_commands.includes("set_value") ? "" : "none";
  if (resources) {
    const select = el<HTMLSelectElement>("setvalue-topic");
    select.innerHTML = "";
    for (const topic of setpointTopics(resources.topics)) {
      const option = document.createElement("option");
      option.value = topic.name;
      option.textContent = `${topic.name} [${topic.unit}]`;
      select.appendChild(option);
    }
  }
}

async function issueCommand(kind: string, args: Record<string, unknown> = {}): Promise<void> {
  try {
    if (kind === "start_experiment") {
      const name = el<HTMLSelectElement>("scenario-select").value;
      buffers.clear();
      const started = await client.startRun(name, { pace: 1.0 });
      currentRun = started.run_id;
      setBanner(`run ${currentRun} started`, "ok");
      return;
    }
    const run = currentRun ?? "none";
    const result = await client.command(run, kind, args);
    setBanner(`${kind}: ${JSON.stringify(result.data).slice(0, 120)}`, "ok");
  } catch (error) {
    if (error instanceof HubApiError) {
      setBanner(`${kind} rejected: ${error.message}`, "err");
    } else {
      setBanner(`${kind} failed: ${error}`, "err");
    }
  }
}

function renderReport(report: ValidationReport): void {
  const container = el<HTMLDivElement>("report");
  container.innerHTML = "";
  for (const layer of summarizeReport(report)) {
    const section = document.createElement("section");
    const badge =
      layer.errors > 0 ? `<span class="badge err">${layer.errors}</span>` :
      layer.warnings > 0 ? `<span class="badge warn">${layer.warnings}</span>` :
      `<span class="badge ok">0</span>`;
    section.innerHTML = `<h3>${layer.layer} ${badge}</h3>`;
    for (const issue of layer.issues) {
      const div = document.createElement("div");
      div.className = `issue ${issue.severity}`;
      div.textContent = `[${issue.severity}] ${issue.code}: ${issue.message}`;
      const explanation = explanationFor(issue);
      if (explanation) {
        const note = document.createElement("p");
        note.className = "explanation";
        note.textContent = explanation;
        div.appendChild(note);
      }
      section.appendChild(div);
    }
    container.appendChild(section);
  }
}

async function boot(): Promise<void> {
  const site = new URLSearchParams(location.search).get("site") ?? undefined;
  const token = new URLSearchParams(location.search).get("token") ?? undefined;
  client = new HubClient("", { site, token });
  try {
    session = await client.session();
    resources = await client.resources();
  } catch (error) {
    setBanner(`hub unreachable: ${error}`, "err");
    setTimeout(boot, 2000);
    return;
  }
  el<HTMLElement>("whoami").textContent = `${session.operator} @ ${session.site} ` +
    `(granted: ${session.granted_commands.join(", ") || "nothing"})`;
  const scenarios = await client.scenarios();
  const select = el<HTMLSelectElement>("scenario-select");
  select.innerHTML = "";
  for (const name of scenarios.scenarios) {
    const option = document.createElement("option");
    option.value = name;
    option.textContent = name;
    select.appendChild(option);
  }
  const showReport = async () => {
    try {
      renderReport(await client.validate(select.value));
    } catch (error) {
      setBanner(`validation failed: ${error}`, "err");
    }
  };
  select.onchange = () => {
    void showReport();
  };
  if (select.value) void showReport();
  renderCommands();

  el<HTMLFormElement>("setvalue-form").onsubmit = (event) => {
    event.preventDefault();
    const topic = el<HTMLSelectElement>("setvalue-topic").value;
    const value = el<HTMLInputElement>("setvalue-value").value;
    const check = validateSetValue(topic, value, resources?.topics ?? []);
    if (!check.ok) {
      setBanner(`set_value blocked client-side: ${check.reason}`, "warn");
      return;
    }
    void issueCommand("set_value", { topic, value: Number(value) });
  };

  const protocol = location.protocol === "https:" ? "wss" : "ws";
  const stream = new StreamClient(`${protocol}://${location.host}/api/v1/stream`, {
    onRecords: (records) => buffers.ingest(records),
    onStateChange: (connected) =>
      connected ? setBanner("stream connected", "ok") : setBanner("stream lost; resubscribing...", "warn"),
  });
  stream.connect();
  setInterval(() => {
    renderTable();
    renderPlot();
  }, 100);
}

void boot();
