"""Deterministic impact-coupled market engine.

Mechanics
---------
A session consists of rounds t = 1..end_round over a price series that starts
at ``p_0 = config.initial_price``.  In round t:

1. every trader submits an action (BUY / SELL / NONE) knowing the history
   up to ``p_{t-1}``;
2. order sizes are valued in francs at ``p_{t-1}`` (a buy commits the
   trader's full cash, a sell the market value of their full share holding);
3. the collective impact is ``I_t = (N_t/N) * (B_t - S_t) / (B_t + S_t)``;
4. the price moves to ``p_t = p_{t-1} * exp(m + s*eta_t + I_t)`` with
   ``eta_t`` a truncated unit-variance-scaled Student-t(3) draw;
5. orders execute at the realized ``p_t`` -- traders pay their own impact.

A parallel "bare" series advances under the identical noise with ``I = 0``:
the counterfactual price had everyone bought and held.

Positions are all-or-nothing: a trader is either fully in the market
(``cash == 0``) or fully out (``shares == 0``).  Buying in round 1 and
holding gives final wealth ``endowment * exp(sum_{t>=2}(m + s*eta_t))`` --
the entry price cancels out of shares * final price, so a T-round session
carries T-1 growth rounds for a buy-and-hold trader.

The noise sequence and the session end time are pre-drawn from the seed at
construction, which makes sessions replayable and lets paired sessions share
a noise realisation via ``config.noise_seed``.

Accounting uses decimal arithmetic with round-half-even: cash at 6 fractional
digits, share holdings at 12, liquidation values at 9.  This keeps long
sessions free of accumulated binary-float drift and makes logs byte-stable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ..numerics.rng import RngStream, student_t_unit_series
from .config import MarketConfig

__all__ = [
    "Action",
    "Position",
    "Decision",
    "AgentView",
    "TraderState",
    "TraderSnapshot",
    "RoundRecord",
    "LiquidationEntry",
    "SessionLog",
    "EndTime",
    "MarketSession",
    "compute_impact",
    "step_price",
    "settle_round",
    "liquidate",
    "draw_end_time",
    "run_session",
    "most_probable_wealth",
    "expected_wealth",
]

log = logging.getLogger(__name__)

CASH_QUANTUM = Decimal("0.000001")        # 6 fractional digits
SHARE_QUANTUM = Decimal("0.000000000001")  # 12 fractional digits
VALUE_QUANTUM = Decimal("0.000000001")     # liquidation marks, 9 digits

# noise and end-time draws come from distinct streams of the session seed
STREAM_NOISE = 1
STREAM_END_TIME = 2


class Action:
    BUY = "BUY"
    SELL = "SELL"
    NONE = "NONE"
    ALL = frozenset({"BUY", "SELL", "NONE"})


class Position:
    IN = "IN"
    OUT = "OUT"


class Decision(NamedTuple):
    """What an agent returns each round: an action plus an optional price forecast."""

    action: str
    forecast: float | None = None


class AgentView(NamedTuple):
    """Public information plus the trader's own account, as a human would see it.

    ``prices[t]`` is the realized price after round t (``prices[0]`` is the
    initial price); the view for round t carries prices up to t-1.  Market
    depth and other traders' actions are never exposed.  The price sequence
    is shared with the engine, not copied; agents must treat it as
    read-only.
    """

    t: int
    prices: Sequence[float]
    position: str
    cash: float
    shares: float
    m: float
    s: float

    @property
    def price(self) -> float:
        return self.prices[-1]

    @property
    def last_return(self) -> float | None:
        if len(self.prices) < 2:
            return None
        return math.log(self.prices[-1] / self.prices[-2])

    @property
    def wealth(self) -> float:
        return self.cash if self.position == Position.OUT else self.shares * self.price


@dataclass
class TraderState:
    trader_id: int
    cash: Decimal
    shares: Decimal
    position: str
    pending_action: str = Action.NONE

    def wealth_at(self, price: float) -> Decimal:
        if self.position == Position.OUT:
            return self.cash
        return (self.shares * Decimal(price)).quantize(VALUE_QUANTUM, ROUND_HALF_EVEN)


class TraderSnapshot(NamedTuple):
    trader_id: int
    action: str
    position_after: str
    cash_after: Decimal
    shares_after: Decimal
    forecast: float | None


class RoundRecord(NamedTuple):
    t: int
    eta: float
    impact: float
    price: float
    n_active: int
    buy_volume: float
    sell_volume: float
    per_trader: tuple[TraderSnapshot, ...]


class LiquidationEntry(NamedTuple):
    trader_id: int
    wealth: Decimal
    net: Decimal
    payout: Decimal


@dataclass
class SessionLog:
    config: MarketConfig
    rounds: list[RoundRecord]
    end_round: int
    bare_prices: list[float]
    liquidation: list[LiquidationEntry]

    @property
    def prices(self) -> list[float]:
        return [self.config.initial_price] + [r.price for r in self.rounds]

    @property
    def n_traders(self) -> int:
        return self.config.depth_n


class EndTime(NamedTuple):
    rounds: int
    capped: bool


def draw_end_time(config: MarketConfig, rng: RngStream | np.random.Generator) -> int:
    """Pre-draw the hidden session end: min_rounds + geometric extra rounds.

    The geometric failure probability is ``1 - continuation``; the result is
    clamped to ``config.max_rounds`` (with a warning) so a continuation
    probability close to one cannot produce unbounded sessions.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    p = 1.0 - config.continuation
    extra = int(gen.geometric(p))
    total = config.min_rounds + extra
    if total > config.max_rounds:
        log.warning(
            "end time %d exceeds hard cap %d; capping", total, config.max_rounds
        )
        return config.max_rounds
    return total


def compute_impact(orders: Sequence[tuple[str, float]], depth_n: int) -> float:
    """Collective log-price impact of one round's orders.

    ``orders`` holds (action, size-in-francs) pairs for the traders that
    submitted one; sizes are valued at the last observed price.
    """
    n_active = sum(1 for a, _ in orders if a != Action.NONE)
    if n_active == 0:
        return 0.0
    buys = sum(size for a, size in orders if a == Action.BUY)
    sells = sum(size for a, size in orders if a == Action.SELL)
    gross = buys + sells
    if gross <= 0.0:
        return 0.0
    return (n_active / depth_n) * (buys - sells) / gross


def step_price(price: float, config: MarketConfig, eta: float, impact: float) -> float:
    if price <= 0:
        raise ValueError(f"price must be positive, got {price}")
    return price * math.exp(config.m + config.s * eta + impact)


def settle_round(states: Sequence[TraderState], price_next: float) -> None:
    """Execute every pending action at the realized price, in place.

    BUY requires OUT and converts all cash to shares; SELL requires IN and
    converts all shares to cash; violations were already downgraded to NONE
    by validation.  NONE carries the position over.
    """
    p = Decimal(price_next)
    for st in states:
        act = st.pending_action
        if act == Action.BUY and st.position == Position.OUT:
            st.shares = (st.cash / p).quantize(SHARE_QUANTUM, ROUND_HALF_EVEN)
            st.cash = Decimal("0")
            st.position = Position.IN
        elif act == Action.SELL and st.position == Position.IN:
            st.cash = (st.shares * p).quantize(CASH_QUANTUM, ROUND_HALF_EVEN)
            st.shares = Decimal("0")
            st.position = Position.OUT
        st.pending_action = Action.NONE


def liquidate(
    states: Sequence[TraderState], final_price: float, endowment: float
) -> list[LiquidationEntry]:
    """Mark every account to the final price (no impact) and floor payouts at zero."""
    endow = Decimal(str(endowment))
    out = []
    for st in states:
        wealth = st.wealth_at(final_price)
        net = wealth - endow
        out.append(LiquidationEntry(st.trader_id, wealth, net, max(net, Decimal("0"))))
    return out


class MarketSession:
    """Stepwise session: feed one round of actions, get one settled record.

    The CLI and the live server both drive this object; ``run_session`` wraps
    it for bot-only batch runs.  ``rounds`` overrides the drawn end time
    (used for fixed-horizon experiments and tests).
    """

    def __init__(self, config: MarketConfig, *, rounds: int | None = None):
        self.config = config
        if rounds is None:
            rounds = draw_end_time(config, RngStream(config.seed, STREAM_END_TIME))
        if rounds < 1:
            raise ValueError(f"session needs at least one round, got {rounds}")
        self.end_round = rounds
        noise_gen = RngStream(config.effective_noise_seed, STREAM_NOISE).generator()
        self.eta = student_t_unit_series(
            noise_gen, rounds, df=config.noise_df, cutoff=config.noise_cutoff
        )
        endow = Decimal(str(config.endowment)).quantize(CASH_QUANTUM)
        self.traders = [
            TraderState(i, endow, Decimal("0"), Position.OUT)
            for i in range(config.depth_n)
        ]
        self.prices: list[float] = [config.initial_price]
        self.bare_prices: list[float] = [config.initial_price]
        self.rounds: list[RoundRecord] = []
        self.t = 0

    @property
    def finished(self) -> bool:
        return self.t >= self.end_round

    def view_for(self, trader_id: int) -> AgentView:
        st = self.traders[trader_id]
        return AgentView(
            t=self.t + 1,
            prices=self.prices,
            position=st.position,
            cash=float(st.cash),
            shares=float(st.shares),
            m=self.config.m,
            s=self.config.s,
        )

    def step(self, actions: dict[int, Decision]) -> RoundRecord:
        """Settle one round.  ``actions`` maps trader_id to its decision;
        missing traders default to NONE."""
        if self.finished:
            raise RuntimeError("session already ended")
        t = self.t + 1
        last_price = self.prices[-1]

        orders: list[tuple[str, float]] = []
        applied: dict[int, str] = {}
        forecasts: dict[int, float | None] = {}
        for st in self.traders:
            decision = actions.get(st.trader_id)
            action = decision.action if decision else Action.NONE
            forecasts[st.trader_id] = decision.forecast if decision else None
            if action not in Action.ALL:
                log.warning("round %d: trader %d sent unknown action %r; treating as NONE",
                            t, st.trader_id, action)
                action = Action.NONE
            if action == Action.BUY and st.position != Position.OUT:
                log.warning("round %d: trader %d BUY while IN rejected", t, st.trader_id)
                action = Action.NONE
            elif action == Action.SELL and st.position != Position.IN:
                log.warning("round %d: trader %d SELL while OUT rejected", t, st.trader_id)
                action = Action.NONE
            st.pending_action = action
            applied[st.trader_id] = action
            if action == Action.BUY:
                orders.append((action, float(st.cash)))
            elif action == Action.SELL:
                orders.append((action, float(st.shares) * last_price))

        impact = compute_impact(orders, self.config.depth_n)
        eta = float(self.eta[t - 1])
        price = step_price(last_price, self.config, eta, impact)
        bare = step_price(self.bare_prices[-1], self.config, eta, 0.0)
        settle_round(self.traders, price)

        snapshots = tuple(
            TraderSnapshot(
                st.trader_id,
                applied[st.trader_id],
                st.position,
                st.cash,
                st.shares,
                forecasts[st.trader_id],
            )
            for st in self.traders
        )
        record = RoundRecord(
            t=t,
            eta=eta,
            impact=impact,
            price=price,
            n_active=sum(1 for a, _ in orders),
            buy_volume=float(sum(sz for a, sz in orders if a == Action.BUY)),
            sell_volume=float(sum(sz for a, sz in orders if a == Action.SELL)),
            per_trader=snapshots,
        )
        self.prices.append(price)
        self.bare_prices.append(bare)
        self.rounds.append(record)
        self.t = t
        return record

    def liquidate(self) -> list[LiquidationEntry]:
        if not self.finished:
            raise RuntimeError("session still running")
        return liquidate(self.traders, self.prices[-1], self.config.endowment)

    def build_log(self) -> SessionLog:
        return SessionLog(
            config=self.config,
            rounds=list(self.rounds),
            end_round=self.end_round,
            bare_prices=list(self.bare_prices),
            liquidation=self.liquidate(),
        )


AgentCallback = Callable[[AgentView], Decision]


def run_session(
    config: MarketConfig,
    agents: Sequence[AgentCallback],
    *,
    rounds: int | None = None,
) -> SessionLog:
    """Run a bots-only session to completion.

    ``agents`` holds one decision callback per trader (``len == depth_n``).
    A callback that raises is treated as NONE for that round and logged.
    """
    if len(agents) != config.depth_n:
        raise ValueError(
            f"agent count {len(agents)} does not match depth_n {config.depth_n}"
        )
    session = MarketSession(config, rounds=rounds)
    while not session.finished:
        decisions: dict[int, Decision] = {}
        for trader_id, agent in enumerate(agents):
            try:
                decisions[trader_id] = agent(session.view_for(trader_id))
            except Exception:
                log.exception("agent %d failed in round %d; treating as NONE",
                              trader_id, session.t + 1)
                decisions[trader_id] = Decision(Action.NONE)
        session.step(decisions)
    return session.build_log()


def replay_session_log(log: SessionLog) -> SessionLog:
    """Re-run the engine from a log's config and recorded decisions.

    The rebuilt log must match the original byte for byte when serialized;
    any divergence means the log or the engine changed.
    """
    session = MarketSession(log.config, rounds=log.end_round)
    for rec in log.rounds:
        decisions = {
            snap.trader_id: Decision(snap.action, snap.forecast)
            for snap in rec.per_trader
        }
        session.step(decisions)
    return session.build_log()


def most_probable_wealth(config: MarketConfig, T: int, w0: float) -> float:
    """Modal wealth of a buy-and-hold investor after T growth rounds: w0*exp(m*T)."""
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    return w0 * float(np.exp(config.m * T))


def expected_wealth(config: MarketConfig, T: int, w0: float) -> float:
    """Companion mean-wealth approximation w0*(1 + m + s^2/2)^T.

    First-order in (m + s^2/2) per round; the exact engine mean compounds
    ``exp(m) * E[exp(s*eta)]`` instead, which differs by a few percent over
    a hundred rounds (and the truncated t(3) noise carries variance below
    one).  Kept as the standard closed-form reference point.
    """
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    return w0 * (1.0 + config.m + config.s**2 / 2.0) ** T
