// Bounded per-topic sample buffers feeding the plot and the live table.
// Rendering is decoupled from message arrival: arrivals land here, the
// view reads snapshots on its own cadence.

import type { TraceRecord } from "./types.js";

export const MAX_POINTS = 10_000; // per topic; beyond this, drop oldest

export interface Point {
  t_ns: number;
  value: number;
}

export interface TableRow {
  topic: string;
  value: number | boolean | string;
  unit: string;
  quality: string;
  sim_time_ns: number;
  stale: boolean;
  updatedAtMs: number;
}

export class TopicBuffers {
  private series = new Map<string, Point[]>();
  private latest = new Map<string, TableRow>();

  ingest(records: TraceRecord[], nowMs: number = Date.now()): void {
    for (const record of records) {
      if (typeof record.value === "number") {
        let points = this.series.get(record.topic);
        if (!points) {
          points = [];
          this.series.set(record.topic, points);
        }
        points.push({ t_ns: record.sim_time_ns, value: record.value });
        if (points.length > MAX_POINTS) {
          points.splice(0, points.length - MAX_POINTS);
        }
      }
      this.latest.set(record.topic, {
        topic: record.topic,
        value: record.value,
        unit: record.unit,
        quality: record.quality,
        sim_time_ns: record.sim_time_ns,
        stale: record.quality === "stale" || record.quality === "bad",
        updatedAtMs: nowMs,
      });
    }
  }

  topics(): string[] {
    return [...this.series.keys()].sort();
  }

  points(topic: string): Point[] {
    return this.series.get(topic) ?? [];
  }

  tableRows(): TableRow[] {
    return [...this.latest.values()].sort((a, b) => a.topic.localeCompare(b.topic));
  }

  size(topic: string): number {
    return this.series.get(topic)?.length ?? 0;
  }

  clear(): void {
    this.series.clear();
    this.latest.clear();
  }
}
