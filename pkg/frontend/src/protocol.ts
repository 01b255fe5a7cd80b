// Message types for the marketlab wire protocol (schema version 1).
// One JSON object per message; the transport decides the framing
// (websocket frame or newline-delimited TCP).

export const SCHEMA_VERSION = 1;

export type Action = "BUY" | "SELL" | "NONE";
export type Position = "IN" | "OUT";

export interface BaseMessage {
  kind: string;
  v: number;
  t_ms: number;
}

export interface Welcome extends BaseMessage {
  kind: "WELCOME";
  session_id: string;
  trader_id: number;
  seat_token: string;
  practice: boolean;
  market: {
    m: number;
    s: number;
    continuation: number;
    endowment: number;
    initial_price: number;
    round_seconds: number;
  };
  state: {
    round: number;
    prices: number[];
    position: Position;
    cash: number;
    shares: number;
    ended?: boolean;
    lottery_answered?: Record<string, number[]>;
  };
}

export interface RoundOpen extends BaseMessage {
  kind: "ROUND_OPEN";
  session_id: string;
  round: number;
  deadline_ms: number;
  prices: number[];
  your: Account;
}

export interface RoundResult extends BaseMessage {
  kind: "ROUND_RESULT";
  session_id: string;
  round: number;
  price: number;
  log_return: number;
  your: Account;
  forecast_reward: number;
}

export interface SessionEnd extends BaseMessage {
  kind: "SESSION_END";
  session_id: string;
  final_price: number;
  your: {
    wealth: number;
    net: number;
    payout_francs: number;
    forecast_total: number;
  };
}

export interface LotteryPair {
  index: number;
  scale: string;
  p_high: number;
  safe: [number, number][];
  risky: [number, number][];
}

export interface LotteryTask extends BaseMessage {
  kind: "LOTTERY_TASK";
  session_id: string;
  menu: { scales: string[]; pairs: LotteryPair[] };
}

export interface Payout extends BaseMessage {
  kind: "PAYOUT";
  session_id: string;
  dice: number;
  lottery: {
    scale_dice: number;
    scale: string;
    pair_index: number;
    choice: number;
    payoff_eur: number;
  };
  market_francs: number;
  forecast_francs: number;
  lottery_eur: number;
  eur_total: number;
}

export interface Ack extends BaseMessage {
  kind: "ACK";
  op: string;
  [key: string]: unknown;
}

export interface ErrorMessage extends BaseMessage {
  kind: "ERROR";
  code: string;
  message: string;
}

export interface Account {
  position: Position;
  cash: number;
  shares: number;
}

export type ServerMessage =
  | Welcome
  | RoundOpen
  | RoundResult
  | SessionEnd
  | LotteryTask
  | Payout
  | Ack
  | ErrorMessage;

export function makeMsg(kind: string, payload: Record<string, unknown>): Record<string, unknown> {
  return { kind, v: SCHEMA_VERSION, t_ms: Date.now(), ...payload };
}

export function parseServerMessage(raw: string): ServerMessage {
  const msg = JSON.parse(raw);
  if (typeof msg !== "object" || msg === null || typeof msg.kind !== "string") {
    throw new Error("malformed server message");
  }
  if (msg.v !== SCHEMA_VERSION) {
    throw new Error(`unsupported schema version ${msg.v}`);
  }
  return msg as ServerMessage;
}
