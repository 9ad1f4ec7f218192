// WebSocket stream client with automatic resubscribe after disconnects.

import type { StreamEnvelope, TraceRecord } from "./types.js";

export interface StreamEvents {
  onRecords: (records: TraceRecord[]) => void;
  onStateChange?: (connected: boolean) => void;
}

export function parseEnvelope(text: string): StreamEnvelope {
  const raw = JSON.parse(text) as StreamEnvelope;
  if (raw.v !== 1 || typeof raw.type !== "string") {
    throw new Error(`bad envelope: ${text.slice(0, 80)}`);
  }
  return raw;
}

type WebSocketFactory = (url: string) => WebSocket;

export class StreamClient {
  private socket: WebSocket | null = null;
  private closed = false;
  private retryMs = 500;

  constructor(
    private url: string,
    private events: StreamEvents,
    private factory: WebSocketFactory = (u) => new WebSocket(u),
  ) {}

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.retryMs = 500;
      this.events.onStateChange?.(true);
    };
    socket.onmessage = (event: MessageEvent) => {
      const envelope = parseEnvelope(String(event.data));
      if (envelope.type === "stream" && envelope.payload.records?.length) {
        this.events.onRecords(envelope.payload.records);
      }
    };
    socket.onclose = () => {
      this.events.onStateChange?.(false);
      if (!this.closed) {
        // resubscribe without a page reload
        setTimeout(() => this.open(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 5000);
      }
    };
    socket.onerror = () => {
      socket.close();
    };
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
