// WebSocket client for the gateway bridge: line-delimited JSON both ways,
// automatic reconnect with the UI state preserved.

import { OperatorMessage, validateOperatorMessage } from "./schema.js";

export interface GatewayClientHandlers {
  onRaw(raw: unknown): void;
  onConnection(up: boolean): void;
}

export class GatewayClient {
  private ws: WebSocket | null = null;
  private closed = false;

  constructor(
    private url: string,
    private handlers: GatewayClientHandlers,
    private retryMs = 1000,
  ) {}

  connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => this.handlers.onConnection(true);
    ws.onmessage = (ev) => {
      for (const line of String(ev.data).split("\n")) {
        const trimmed = line.trim();
        if (!trimmed) continue;
        try {
          this.handlers.onRaw(JSON.parse(trimmed));
        } catch {
          this.handlers.onRaw(null); // counted as ignored upstream
        }
      }
    };
    ws.onclose = () => {
      this.handlers.onConnection(false);
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
      }
    };
    ws.onerror = () => ws.close();
  }

  /** Validate against the bridge schema, then send as one JSON line. */
  send(msg: OperatorMessage): void {
    const problems = validateOperatorMessage(msg);
    if (problems.length) {
      throw new Error(`refusing to send invalid message: ${problems.join("; ")}`);
    }
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) {
      throw new Error("gateway not connected");
    }
    this.ws.send(JSON.stringify(msg) + "\n");
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
