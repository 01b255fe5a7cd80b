// Transport abstraction: the client logic is framing-agnostic.
// Browsers use the WebSocket gateway (one JSON text per frame); the test
// harness uses a node TCP transport with newline framing.

export interface Transport {
  send(payload: Record<string, unknown>): void;
  onMessage(handler: (raw: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export class WsTransport implements Transport {
  private socket: WebSocket;
  private messageHandler: ((raw: string) => void) | null = null;
  private closeHandler: (() => void) | null = null;

  constructor(url: string) {
    this.socket = new WebSocket(url);
    this.socket.addEventListener("message", (ev) => {
      if (this.messageHandler) this.messageHandler(String(ev.data));
    });
    this.socket.addEventListener("close", () => {
      if (this.closeHandler) this.closeHandler();
    });
  }

  ready(): Promise<void> {
    if (this.socket.readyState === WebSocket.OPEN) return Promise.resolve();
    return new Promise((resolve, reject) => {
      this.socket.addEventListener("open", () => resolve(), { once: true });
      this.socket.addEventListener("error", () => reject(new Error("connect failed")), {
        once: true,
      });
    });
  }

  send(payload: Record<string, unknown>): void {
    this.socket.send(JSON.stringify(payload));
  }

  onMessage(handler: (raw: string) => void): void {
    this.messageHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.socket.close();
  }
}
