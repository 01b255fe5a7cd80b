// Client session state: a pure reducer over server messages.
//
// The view renders only what the server sent — prices, own holdings, own
// rewards, deadlines.  No price (or return) is ever computed client-side
// beyond displaying log(p_t/p_{t-1}) of two server prices in the history
// table.

import type {
  Account,
  LotteryPair,
  Position,
  ServerMessage,
} from "./protocol.js";

export type Phase =
  | "connecting"
  | "joined"
  | "round_open"
  | "settling"
  | "ended"
  | "lottery"
  | "paid";

export type Control = "HOLD" | "BUY" | "SELL";

export interface LotteryState {
  scales: string[];
  pairs: LotteryPair[];
  // selections keyed by `${scale}:${index}`; editable until submitted
  selections: Record<string, 0 | 1>;
  submitted: boolean;
  answeredOnServer: Record<string, number[]>;
}

export interface SessionView {
  phase: Phase;
  connected: boolean;
  sessionId: string | null;
  traderId: number | null;
  seatToken: string | null;
  practice: boolean;
  market: {
    m: number;
    s: number;
    endowment: number;
    roundSeconds: number;
  } | null;
  round: number;
  deadlineMs: number | null;
  clockOffsetMs: number; // serverClock - localClock, estimated from t_ms
  prices: number[];
  account: Account;
  forecastDraft: string;
  forecastRewardTotal: number;
  lastError: string | null;
  carriedOver: boolean; // the previous round ended without our decision
  decidedThisRound: boolean;
  summary: { wealth: number; net: number; forecastTotal: number } | null;
  lottery: LotteryState | null;
  payout: {
    dice: number;
    marketFrancs: number;
    forecastFrancs: number;
    lotteryEur: number;
    eurTotal: number;
  } | null;
}

export function initialView(): SessionView {
  return {
    phase: "connecting",
    connected: false,
    sessionId: null,
    traderId: null,
    seatToken: null,
    practice: false,
    market: null,
    round: 0,
    deadlineMs: null,
    clockOffsetMs: 0,
    prices: [],
    account: { position: "OUT", cash: 0, shares: 0 },
    forecastDraft: "",
    forecastRewardTotal: 0,
    lastError: null,
    carriedOver: false,
    decidedThisRound: false,
    summary: null,
    lottery: null,
    payout: null,
  };
}

// The two legal controls for a position: you can always keep what you hold;
// the trade control depends on the side you are on.
export function controlsFor(position: Position): Control[] {
  return position === "IN" ? ["HOLD", "SELL"] : ["HOLD", "BUY"];
}

export function countdownMs(view: SessionView, localNowMs: number): number | null {
  if (view.deadlineMs === null) return null;
  return Math.max(0, view.deadlineMs - (localNowMs + view.clockOffsetMs));
}

export function reduce(view: SessionView, msg: ServerMessage): SessionView {
  switch (msg.kind) {
    case "WELCOME": {
      const lotteryAnswered = msg.state.lottery_answered ?? {};
      return {
        ...view,
        phase: msg.state.ended ? "ended" : "joined",
        connected: true,
        sessionId: msg.session_id,
        traderId: msg.trader_id,
        seatToken: msg.seat_token,
        practice: msg.practice,
        market: {
          m: msg.market.m,
          s: msg.market.s,
          endowment: msg.market.endowment,
          roundSeconds: msg.market.round_seconds,
        },
        round: msg.state.round,
        prices: msg.state.prices,
        account: {
          position: msg.state.position,
          cash: msg.state.cash,
          shares: msg.state.shares,
        },
        clockOffsetMs: msg.t_ms - Date.now(),
        lottery: view.lottery
          ? { ...view.lottery, answeredOnServer: lotteryAnswered }
          : view.lottery,
        lastError: null,
      };
    }
    case "ROUND_OPEN":
      return {
        ...view,
        phase: "round_open",
        round: msg.round,
        deadlineMs: msg.deadline_ms,
        prices: msg.prices,
        account: msg.your,
        // keep the last settled round's carry-over banner; also catch a
        // round that opened with no result seen in between (reconnects)
        carriedOver:
          view.phase === "round_open" ? !view.decidedThisRound : view.carriedOver,
        decidedThisRound: false,
        forecastDraft: "",
      };
    case "ROUND_RESULT":
      return {
        ...view,
        phase: "settling",
        prices: [...view.prices.slice(0, msg.round), msg.price],
        account: msg.your,
        forecastRewardTotal: view.forecastRewardTotal + msg.forecast_reward,
        carriedOver: !view.decidedThisRound,
        deadlineMs: null,
      };
    case "SESSION_END":
      return {
        ...view,
        phase: "ended",
        summary: {
          wealth: msg.your.wealth,
          net: msg.your.net,
          forecastTotal: msg.your.forecast_total,
        },
        deadlineMs: null,
      };
    case "LOTTERY_TASK":
      return {
        ...view,
        phase: "lottery",
        lottery: {
          scales: msg.menu.scales,
          pairs: msg.menu.pairs,
          selections: {},
          submitted: false,
          answeredOnServer: view.lottery?.answeredOnServer ?? {},
        },
      };
    case "PAYOUT":
      return {
        ...view,
        phase: "paid",
        payout: {
          dice: msg.dice,
          marketFrancs: msg.market_francs,
          forecastFrancs: msg.forecast_francs,
          lotteryEur: msg.lottery_eur,
          eurTotal: msg.eur_total,
        },
      };
    case "ACK":
      if (msg.op === "decision") {
        return { ...view, decidedThisRound: true, lastError: null };
      }
      return view;
    case "ERROR":
      return { ...view, lastError: `${msg.code}: ${msg.message}` };
    default:
      return view;
  }
}

export function markDisconnected(view: SessionView): SessionView {
  return { ...view, connected: false };
}

export function selectLottery(
  view: SessionView,
  scale: string,
  index: number,
  choice: 0 | 1,
): SessionView {
  if (!view.lottery || view.lottery.submitted) return view;
  return {
    ...view,
    lottery: {
      ...view.lottery,
      selections: { ...view.lottery.selections, [`${scale}:${index}`]: choice },
    },
  };
}

export function firstUnanswered(view: SessionView): LotteryPair | null {
  if (!view.lottery) return null;
  for (const pair of view.lottery.pairs) {
    const key = `${pair.scale}:${pair.index}`;
    const onServer = view.lottery.answeredOnServer[pair.scale] ?? [];
    if (!(key in view.lottery.selections) && !onServer.includes(pair.index)) {
      return pair;
    }
  }
  return null;
}

export function lotteryComplete(view: SessionView): boolean {
  return view.lottery !== null && firstUnanswered(view) === null;
}
