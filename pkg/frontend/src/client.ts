// SessionClient: wires a transport to the state reducer and exposes the
// participant actions.  All server state flows through reduce(); the client
// adds only input hygiene (double-click debounce, optimistic control lock).

import { makeMsg, parseServerMessage, type Action, type ServerMessage } from "./protocol.js";
import {
  firstUnanswered,
  initialView,
  markDisconnected,
  reduce,
  selectLottery,
  type SessionView,
} from "./state.js";
import type { Transport } from "./transport.js";

const DECISION_DEBOUNCE_MS = 250;

export type ViewListener = (view: SessionView, msg: ServerMessage | null) => void;

export class SessionClient {
  view: SessionView = initialView();
  private listeners: ViewListener[] = [];
  private lastDecision: { round: number; action: Action; atMs: number } | null = null;

  constructor(
    private transport: Transport,
    private sessionId: string,
  ) {
    transport.onMessage((raw) => {
      const msg = parseServerMessage(raw);
      this.view = reduce(this.view, msg);
      this.emit(msg);
    });
    transport.onClose(() => {
      this.view = markDisconnected(this.view);
      this.emit(null);
    });
  }

  subscribe(listener: ViewListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(msg: ServerMessage | null): void {
    for (const listener of this.listeners) listener(this.view, msg);
  }

  join(seatToken?: string): void {
    const payload: Record<string, unknown> = { session_id: this.sessionId };
    if (seatToken) payload.seat_token = seatToken;
    this.transport.send(makeMsg("JOIN", payload));
  }

  // Returns false when the click was swallowed (debounce or closed round).
  decide(action: Action, nowMs: number = Date.now()): boolean {
    if (this.view.phase !== "round_open") return false;
    const last = this.lastDecision;
    if (
      last &&
      last.round === this.view.round &&
      last.action === action &&
      nowMs - last.atMs < DECISION_DEBOUNCE_MS
    ) {
      return false; // double-click: a single message goes out
    }
    this.lastDecision = { round: this.view.round, action, atMs: nowMs };
    this.transport.send(
      makeMsg("DECISION", {
        session_id: this.sessionId,
        round: this.view.round,
        action,
      }),
    );
    return true;
  }

  // The forecast is optional; a decision is sendable without one.
  forecast(price: number): boolean {
    if (this.view.phase !== "round_open" || !(price > 0)) return false;
    this.transport.send(
      makeMsg("FORECAST", {
        session_id: this.sessionId,
        round: this.view.round,
        price,
      }),
    );
    return true;
  }

  chooseLottery(scale: string, index: number, choice: 0 | 1): void {
    this.view = selectLottery(this.view, scale, index, choice);
    this.emit(null);
  }

  // Final submit: sends every locally selected, not-yet-answered pair.
  submitLottery(): number {
    const lottery = this.view.lottery;
    if (!lottery) return 0;
    let sent = 0;
    for (const pair of lottery.pairs) {
      const key = `${pair.scale}:${pair.index}`;
      const answered = lottery.answeredOnServer[pair.scale]?.includes(pair.index);
      const choice = lottery.selections[key];
      if (answered || choice === undefined) continue;
      this.transport.send(
        makeMsg("LOTTERY_CHOICE", {
          session_id: this.sessionId,
          scale: pair.scale,
          index: pair.index,
          choice,
        }),
      );
      sent += 1;
    }
    this.view = { ...this.view, lottery: { ...lottery, submitted: true } };
    this.emit(null);
    return sent;
  }

  nextLotteryPair() {
    return firstUnanswered(this.view);
  }

  close(): void {
    this.transport.close();
  }
}
