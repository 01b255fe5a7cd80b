"""Event-sourced session runtime.

One runtime owns one live session: it drives the market engine round by
round, merges bot decisions with human submissions, persists every settled
round to an append-only event log *before* anything is broadcast, and can be
reconstructed from that log after a crash.  Replaying a finished runtime's
log through the engine reproduces the exported session log byte for byte.

Event log (NDJSON, one event per line):
    {"ev": "plan", "plan": {...}}
    {"ev": "round", "t": k, "decisions": {...}, "price": p}
    {"ev": "session_end"}
    {"ev": "lottery", "trader": i, "scale": s, "index": j, "choice": c}
    {"ev": "abort"}

The ``round`` event stores the *applied* decisions; on resume the engine
re-steps them and the recorded price is checked against the recomputed one,
so silent divergence (corrupted log, changed engine) is detected rather than
propagated.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..agents import build_agents
from ..market.config import MarketConfig
from ..market.engine import (
    Action,
    Decision,
    MarketSession,
    RoundRecord,
    SessionLog,
)
from ..market.logio import write_session_log
from ..numerics.rng import RngStream
from ..risk import LotteryMenu, LotteryResponse, default_menu

__all__ = [
    "SessionPlan",
    "SessionRuntime",
    "score_forecast",
    "compute_payout",
    "resolve_lottery",
    "FRANCS_TO_EUR",
]

log = logging.getLogger(__name__)

FRANCS_TO_EUR = 0.25  # 100 francs = EUR 25
FORECAST_REWARD_CAP = 0.5   # francs per round
FORECAST_REWARD_BAND = 0.10  # relative error at which the reward hits zero
PRACTICE_ROUNDS = 10


def score_forecast(
    forecast: float | None,
    realized: float,
    cap: float = FORECAST_REWARD_CAP,
    band: float = FORECAST_REWARD_BAND,
) -> float:
    """Linear-decay forecast reward, zero at ``band`` relative error.

    Missing or non-positive forecasts earn nothing.  The cap keeps the
    forecasting game an order of magnitude below market earnings.
    """
    if realized <= 0:
        raise ValueError(f"realized price must be positive, got {realized}")
    if forecast is None or forecast <= 0:
        return 0.0
    rel_err = abs(forecast - realized) / (band * realized)
    return max(0.0, cap * (1.0 - rel_err))


def compute_payout(
    session_summaries: Sequence[dict],
    dice: int,
    lottery_eur: float = 0.0,
    rate: float = FRANCS_TO_EUR,
) -> dict:
    """Take-home pay: one dice-selected session's net (floored at zero) plus
    that session's forecasting rewards, converted to EUR, plus the lottery
    payoff (already EUR).

    ``session_summaries`` holds the per-subject summaries of the paired runs
    in order; dice 1-3 selects the first, 4-6 the second.
    """
    if not 1 <= dice <= 6:
        raise ValueError(f"dice must be 1..6, got {dice}")
    if not session_summaries or any(s is None for s in session_summaries):
        raise ValueError("all paired sessions must be complete before payout")
    pick = 0 if dice <= 3 or len(session_summaries) == 1 else 1
    chosen = session_summaries[pick]
    market = max(float(chosen["net"]), 0.0)
    forecast = float(chosen.get("forecast_total", 0.0))
    eur = (market + forecast) * rate + lottery_eur
    return {
        "dice": dice,
        "selected_session": pick,
        "market_francs": market,
        "forecast_francs": forecast,
        "lottery_eur": lottery_eur,
        "eur_total": eur,
    }


def resolve_lottery(
    responses: Sequence[LotteryResponse],
    menu: LotteryMenu,
    rng: RngStream,
) -> dict:
    """Play out the incentivized lottery: a dice picks the payoff scale, one
    pair is drawn at random, and the chosen option is realized."""
    gen = rng.generator()
    dice = int(gen.integers(1, 7))
    scales = menu.scales
    scale = scales[0] if dice <= 3 or len(scales) == 1 else scales[1]
    by_scale = {r.scale: r for r in responses}
    if scale not in by_scale:
        raise ValueError(f"no response for scale {scale}")
    pair_index = int(gen.integers(1, 11))
    pair = next(p for p in menu.for_scale(scale) if p.index == pair_index)
    choice = by_scale[scale].choices[pair_index - 1]
    option = pair.risky if choice == 1 else pair.safe
    high = gen.random() < option[0][1]
    payoff = option[0][0] if high else option[1][0]
    return {
        "scale_dice": dice,
        "scale": scale,
        "pair_index": pair_index,
        "choice": int(choice),
        "payoff_eur": float(payoff),
    }


@dataclass(frozen=True)
class SessionPlan:
    session_id: str
    config: MarketConfig
    roster: tuple[dict, ...] = ()
    human_seats: int = 0
    pair_id: str | None = None
    run_index: int = 1
    practice: bool = False
    lottery: bool = True
    rounds: int | None = None  # fixed horizon override; practice forces 10

    def __post_init__(self) -> None:
        bots = sum(int(e.get("count", 1)) for e in self.roster)
        if bots + self.human_seats != self.config.depth_n:
            raise ValueError(
                f"{bots} bots + {self.human_seats} humans != depth_n "
                f"{self.config.depth_n}"
            )

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "config": self.config.to_dict(),
            "roster": list(self.roster),
            "human_seats": self.human_seats,
            "pair_id": self.pair_id,
            "run_index": self.run_index,
            "practice": self.practice,
            "lottery": self.lottery,
            "rounds": self.rounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionPlan":
        return cls(
            session_id=data["session_id"],
            config=MarketConfig.from_dict(data["config"]),
            roster=tuple(data.get("roster", ())),
            human_seats=int(data.get("human_seats", 0)),
            pair_id=data.get("pair_id"),
            run_index=int(data.get("run_index", 1)),
            practice=bool(data.get("practice", False)),
            lottery=bool(data.get("lottery", True)),
            rounds=data.get("rounds"),
        )


class SessionRuntime:
    """Single-writer state machine for one session.

    The service layer feeds human submissions through :meth:`submit` while a
    round is open and calls :meth:`settle` at the deadline (or as soon as
    every human seat has decided).  Bots are evaluated inside ``settle``.
    """

    def __init__(self, plan: SessionPlan, data_dir: str | Path):
        self.plan = plan
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.data_dir / f"{plan.session_id}.events.ndjson"

        rounds = PRACTICE_ROUNDS if plan.practice else plan.rounds
        self.session = MarketSession(plan.config, rounds=rounds)
        n_bots = plan.config.depth_n - plan.human_seats
        self.bots = (
            build_agents(plan.roster, plan.config, expected_count=n_bots)
            if plan.roster
            else []
        )
        self.bot_ids = list(range(len(self.bots)))
        self.human_ids = list(range(len(self.bots), plan.config.depth_n))

        self.round_open = False
        self.pending: dict[int, tuple[str, float | None]] = {}
        self.forecast_totals = {i: 0.0 for i in range(plan.config.depth_n)}
        self.lottery_responses: dict[int, dict[str, list[int | None]]] = {}
        self.lottery_results: dict[int, dict] = {}
        self.ended = False
        self.aborted = False
        self.menu = default_menu()

        if self.events_path.exists():
            self._resume()
        else:
            self._append({"ev": "plan", "plan": plan.to_dict()})

    # --- event log -------------------------------------------------------

    def _append(self, event: dict) -> None:
        line = json.dumps(event, separators=(",", ":"), allow_nan=False) + "\n"
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def _resume(self) -> None:
        with open(self.events_path, encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        if not events or events[0].get("ev") != "plan":
            raise ValueError(f"event log {self.events_path} lacks a plan header")
        recorded = SessionPlan.from_dict(events[0]["plan"])
        if recorded.to_dict() != self.plan.to_dict():
            raise ValueError("event log belongs to a different plan")
        for event in events[1:]:
            kind = event["ev"]
            if kind == "round":
                decisions = {
                    int(k): Decision(v["action"], v.get("forecast"))
                    for k, v in event["decisions"].items()
                }
                record = self.session.step(decisions)
                if record.price != event["price"]:
                    raise ValueError(
                        f"resume divergence in round {record.t}: "
                        f"{record.price!r} != {event['price']!r}"
                    )
                self._score_round(record)
            elif kind == "session_end":
                self.ended = True
            elif kind == "lottery":
                self._apply_lottery(
                    int(event["trader"]), event["scale"], int(event["index"]),
                    int(event["choice"]),
                )
            elif kind == "abort":
                self.aborted = True
        log.info(
            "resumed session %s at round %d/%d",
            self.plan.session_id, self.session.t, self.session.end_round,
        )

    # --- round flow --------------------------------------------------------

    @property
    def current_round(self) -> int:
        return self.session.t + 1

    @property
    def finished(self) -> bool:
        return self.session.finished

    def open_round(self, deadline_ms: int) -> dict:
        if self.ended or self.aborted:
            raise RuntimeError("session is over")
        if self.round_open:
            raise RuntimeError("previous round not settled")
        self.round_open = True
        self.pending = {}
        self.deadline_ms = deadline_ms
        return {
            "round": self.current_round,
            "deadline_ms": deadline_ms,
            "prices": [round(p, 6) for p in self.session.prices],
        }

    def submit(
        self, trader_id: int, action: str | None, forecast: float | None
    ) -> None:
        """Record a human decision; repeated submissions overwrite (the last
        one before the deadline wins)."""
        if not self.round_open:
            raise RuntimeError("no round open")
        if trader_id not in self.human_ids:
            raise ValueError(f"trader {trader_id} is not a human seat")
        prev = self.pending.get(trader_id, (Action.NONE, None))
        self.pending[trader_id] = (
            action if action is not None else prev[0],
            forecast if forecast is not None else prev[1],
        )

    @property
    def all_humans_decided(self) -> bool:
        return all(t in self.pending for t in self.human_ids)

    def settle(self) -> RoundRecord:
        if not self.round_open:
            raise RuntimeError("no round open")
        decisions: dict[int, Decision] = {}
        for bot_id, bot in zip(self.bot_ids, self.bots):
            try:
                decisions[bot_id] = bot(self.session.view_for(bot_id))
            except Exception:
                log.exception("bot %d failed; NONE", bot_id)
                decisions[bot_id] = Decision(Action.NONE)
        for human_id in self.human_ids:
            action, forecast = self.pending.get(human_id, (Action.NONE, None))
            decisions[human_id] = Decision(action, forecast)

        # persist before anything is broadcast: a crash after this append
        # resumes to exactly this state, a crash before it replays the round
        record = self.session.step(decisions)
        self._append({
            "ev": "round",
            "t": record.t,
            "decisions": {
                str(k): {"action": d.action, "forecast": d.forecast}
                for k, d in decisions.items()
            },
            "price": record.price,
        })
        self._score_round(record)
        self.round_open = False
        return record

    def _score_round(self, record: RoundRecord) -> None:
        for snap in record.per_trader:
            self.forecast_totals[snap.trader_id] += score_forecast(
                snap.forecast, record.price
            )

    def end_session(self) -> dict:
        if not self.finished:
            raise RuntimeError("session still has rounds to play")
        if not self.ended:
            self._append({"ev": "session_end"})
            self.ended = True
        final_price = self.session.prices[-1]
        entries = self.session.liquidate()
        return {
            "final_price": final_price,
            "per_trader": {
                e.trader_id: {
                    "wealth": float(e.wealth),
                    "net": float(e.net),
                    "payout_francs": float(e.payout),
                    "forecast_total": self.forecast_totals[e.trader_id],
                }
                for e in entries
            },
        }

    def abort(self) -> None:
        if not self.aborted:
            self._append({"ev": "abort"})
            self.aborted = True

    # --- lottery -----------------------------------------------------------

    def lottery_task(self) -> dict:
        return {
            "scales": list(self.menu.scales),
            "pairs": [
                {
                    "index": p.index,
                    "scale": p.scale,
                    "p_high": p.safe[0][1],
                    "safe": [list(o) for o in p.safe],
                    "risky": [list(o) for o in p.risky],
                }
                for p in self.menu.pairs
            ],
        }

    def submit_lottery(
        self, trader_id: int, scale: str, index: int, choice: int
    ) -> None:
        if scale not in self.menu.scales:
            raise ValueError(f"unknown scale {scale}")
        if not 1 <= index <= 10 or choice not in (0, 1):
            raise ValueError("index must be 1..10 and choice 0/1")
        self._append({
            "ev": "lottery", "trader": trader_id, "scale": scale,
            "index": index, "choice": choice,
        })
        self._apply_lottery(trader_id, scale, index, choice)

    def _apply_lottery(self, trader_id: int, scale: str, index: int, choice: int):
        slots = self.lottery_responses.setdefault(
            trader_id, {s: [None] * 10 for s in self.menu.scales}
        )
        slots[scale][index - 1] = choice

    def lottery_complete(self, trader_id: int) -> bool:
        slots = self.lottery_responses.get(trader_id)
        return bool(slots) and all(
            all(c is not None for c in row) for row in slots.values()
        )

    def lottery_outcome(self, trader_id: int) -> dict:
        if not self.lottery_complete(trader_id):
            raise ValueError(f"trader {trader_id} has unanswered lottery pairs")
        if trader_id not in self.lottery_results:
            responses = [
                LotteryResponse(
                    f"{self.plan.session_id}:{trader_id}", scale,
                    tuple(int(c) for c in row),
                )
                for scale, row in self.lottery_responses[trader_id].items()
            ]
            self.lottery_results[trader_id] = resolve_lottery(
                responses, self.menu,
                RngStream(self.plan.config.seed, 1000 + trader_id),
            )
        return self.lottery_results[trader_id]

    # --- export ------------------------------------------------------------

    def build_log(self) -> SessionLog:
        return self.session.build_log()

    def export_log(self, path: str | Path | None = None) -> Path:
        if path is None:
            # practice sessions are marked at the file level so they never
            # slip into a payout or analysis batch
            suffix = ".practice.ndjson" if self.plan.practice else ".ndjson"
            path = self.data_dir / f"{self.plan.session_id}{suffix}"
        out = Path(path)
        write_session_log(self.build_log(), out)
        return out
