"""Bot strategies and the myopic risk-aversion machinery.

The benchmark strategy buys in round 1 and never trades again.  The
threshold strategy models a myopic risk-averse trader with power-expo
utility who compares the sure payoff of selling (at an assumed impact,
ignoring noise) against the noisy payoff of staying in, and exits once
mark-to-market wealth crosses the critical level where selling wins.  The
contrarian strategy trades against its own return forecast: because orders
execute at the *next* price, a trader expecting the price to drop buys low,
and vice versa.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .market.config import MarketConfig
from .market.engine import Action, AgentView, Decision, Position
from .numerics.rng import RngStream, student_t_unit_series

__all__ = [
    "PowerExpoUtility",
    "Scenario",
    "ThresholdCurve",
    "expected_utility",
    "critical_threshold",
    "BuyAndHold",
    "Idle",
    "Alternator",
    "ThresholdTrader",
    "Contrarian",
    "STRATEGIES",
    "load_roster",
    "build_agents",
]

UTILITY_MC_PATHS = 100_000  # common-random-number paths for noisy scenarios


@dataclass(frozen=True)
class PowerExpoUtility:
    """U(w) = (1 - exp(-alpha * w^(1-r))) / alpha on w > 0.

    Increasing and concave for alpha > 0, 0 < r < 1; bounded above by
    1/alpha; exhibits increasing relative and decreasing absolute risk
    aversion.
    """

    alpha_u: float
    r_u: float

    def __post_init__(self) -> None:
        if self.alpha_u <= 0:
            raise ValueError(f"alpha_u must be positive, got {self.alpha_u}")
        if not 0.0 < self.r_u < 1.0:
            raise ValueError(f"r_u must lie in (0,1), got {self.r_u}")

    def __call__(self, wealth):
        w = np.asarray(wealth, dtype=float)
        if np.any(w < 0):
            raise ValueError("wealth must be non-negative")
        return (1.0 - np.exp(-self.alpha_u * w ** (1.0 - self.r_u))) / self.alpha_u


@dataclass(frozen=True)
class Scenario:
    """One of the myopic comparison cases: the impact the trader imputes to
    the coming round and whether they account for price noise."""

    impact_assumed: float
    include_noise: bool

    @classmethod
    def all_hold(cls) -> "Scenario":
        return cls(0.0, True)

    @classmethod
    def all_sell(cls, include_noise: bool = False) -> "Scenario":
        return cls(-1.0, include_noise)

    @classmethod
    def single_sell(cls, depth_n: int, include_noise: bool = False) -> "Scenario":
        return cls(-1.0 / depth_n, include_noise)


def _noise_paths(config: MarketConfig, mc_paths: int, rng: RngStream | None) -> np.ndarray:
    stream = rng if rng is not None else RngStream(0, 17)
    return student_t_unit_series(
        stream, mc_paths, df=config.noise_df, cutoff=config.noise_cutoff
    )


def expected_utility(
    util: PowerExpoUtility,
    wealth: float,
    config: MarketConfig,
    scenario: Scenario,
    mc_paths: int = UTILITY_MC_PATHS,
    rng: RngStream | None = None,
) -> tuple[float, float]:
    """Mean and standard deviation of next-round utility under a scenario.

    Without noise the growth factor is deterministic and the sd is exactly
    zero; with noise the mean is a Monte Carlo average over ``mc_paths``
    common draws (pass the same ``rng`` to compare scenarios noise-free).
    """
    if wealth <= 0:
        raise ValueError(f"wealth must be positive, got {wealth}")
    if not scenario.include_noise:
        value = float(util(wealth * np.exp(config.m + scenario.impact_assumed)))
        return value, 0.0
    if mc_paths < 10_000:
        raise ValueError(f"mc_paths must be at least 10^4 with noise, got {mc_paths}")
    eta = _noise_paths(config, mc_paths, rng)
    values = util(wealth * np.exp(config.m + config.s * eta + scenario.impact_assumed))
    return float(values.mean()), float(values.std())


@dataclass(frozen=True)
class ThresholdCurve:
    """Critical wealth W*(s) above which the modelled trader sells out."""

    points: tuple[tuple[float, float], ...]  # sorted (s, w_star); inf = never

    def w_star(self, s: float) -> float:
        svals = [p[0] for p in self.points]
        i = bisect_left(svals, s)
        if i < len(svals) and svals[i] == s:
            return self.points[i][1]
        if i == 0:
            return self.points[0][1]
        if i == len(svals):
            return self.points[-1][1]
        (s0, w0), (s1, w1) = self.points[i - 1], self.points[i]
        if not (np.isfinite(w0) and np.isfinite(w1)):
            return w0 if s - s0 <= s1 - s else w1
        return w0 + (w1 - w0) * (s - s0) / (s1 - s0)


_W_LO, _W_HI = 1e-2, 1e8


def critical_threshold(
    util: PowerExpoUtility,
    config: MarketConfig,
    scenario_no_noise: Scenario,
    s_grid: Sequence[float],
    mc_paths: int = UTILITY_MC_PATHS,
    rng: RngStream | None = None,
) -> ThresholdCurve:
    """Critical wealth levels where selling (sure, impacted, noise ignored)
    first beats staying in (noisy, no impact), per grid volatility.

    Uses one shared noise draw across all wealth levels and grid points, so
    the sell-minus-stay gap is a deterministic function bisected to 1e-6
    relative precision.  No crossing in [1e-2, 1e8] is recorded as +inf.
    """
    if scenario_no_noise.include_noise:
        raise ValueError("the sell-side scenario must ignore noise")
    if len(s_grid) == 0:
        raise ValueError("s_grid must not be empty")
    eta = _noise_paths(config, mc_paths, rng)
    sell_growth = float(np.exp(config.m + scenario_no_noise.impact_assumed))

    points = []
    for s in s_grid:
        stay_growth = np.exp(config.m + s * eta)

        def gap(w: float) -> float:
            return float(util(w * sell_growth) - util(w * stay_growth).mean())

        points.append((float(s), _first_crossing(gap)))
    return ThresholdCurve(tuple(sorted(points)))


def _first_crossing(gap) -> float:
    # scan log-spaced wealth for the first sign change, then bisect
    grid = np.logspace(np.log10(_W_LO), np.log10(_W_HI), 121)
    prev_w, prev_g = grid[0], gap(grid[0])
    if prev_g >= 0:
        return float(grid[0])
    for w in grid[1:]:
        g = gap(w)
        if g >= 0:
            lo, hi = prev_w, w
            while hi / lo > 1.0 + 1e-6:
                mid = np.sqrt(lo * hi)
                if gap(mid) >= 0:
                    hi = mid
                else:
                    lo = mid
            return float(hi)
        prev_w, prev_g = w, g
    return float("inf")


# --- strategies -----------------------------------------------------------


class BuyAndHold:
    """Enter in round 1, never trade again; forecast the drift if asked."""

    def __init__(self, emit_forecast: bool = True):
        self.emit_forecast = emit_forecast

    def __call__(self, view: AgentView) -> Decision:
        forecast = view.price * math.exp(view.m) if self.emit_forecast else None
        if view.t == 1 and view.position == Position.OUT:
            return Decision(Action.BUY, forecast)
        return Decision(Action.NONE, forecast)


class Idle:
    """Holds the endowment in cash for the whole session."""

    def __call__(self, view: AgentView) -> Decision:
        return Decision(Action.NONE)


class Alternator:
    """Flips position every round; the maximal-churn fixture."""

    def __call__(self, view: AgentView) -> Decision:
        action = Action.BUY if view.position == Position.OUT else Action.SELL
        return Decision(action)


class ThresholdTrader:
    """Sells once mark-to-market wealth reaches W*(s); re-enters only after
    wealth falls below ``reentry_fraction * W*`` (hysteresis against
    flip-flopping at the boundary)."""

    def __init__(
        self,
        util: PowerExpoUtility,
        curve: ThresholdCurve,
        reentry_fraction: float = 0.8,
    ):
        self.util = util
        self.curve = curve
        self.reentry_fraction = reentry_fraction

    def __call__(self, view: AgentView) -> Decision:
        w_star = self.curve.w_star(view.s)
        if view.position == Position.IN:
            if view.wealth >= w_star:
                return Decision(Action.SELL)
            return Decision(Action.NONE)
        if view.t == 1 or view.wealth < self.reentry_fraction * w_star:
            return Decision(Action.BUY)
        return Decision(Action.NONE)


class Contrarian:
    """Forecasts r_hat = omega0 + omega1 * r(t) and trades against it.

    Orders execute at the next price, so expecting a drop means buying
    cheap next round: BUY when r_hat < -band and OUT, SELL when
    r_hat > +band and IN.  The dead band keeps the 2% drift from causing
    churn on its own.  Always emits the price forecast for the forecasting
    game, trading or not.
    """

    def __init__(self, omega0: float = 0.0, omega1: float = -0.5, band: float = 0.03):
        self.omega0 = omega0
        self.omega1 = omega1
        self.band = band

    def __call__(self, view: AgentView) -> Decision:
        last = view.last_return
        if last is None:
            return Decision(Action.NONE, None)
        r_hat = self.omega0 + self.omega1 * last
        forecast = view.price * math.exp(r_hat)
        if view.position == Position.OUT and r_hat < -self.band:
            return Decision(Action.BUY, forecast)
        if view.position == Position.IN and r_hat > self.band:
            return Decision(Action.SELL, forecast)
        return Decision(Action.NONE, forecast)


STRATEGIES = {
    "buy_and_hold": BuyAndHold,
    "idle": Idle,
    "alternator": Alternator,
    "contrarian": Contrarian,
    "threshold": ThresholdTrader,
}


def load_roster(path: str | Path) -> list[dict]:
    """Roster file: {"agents": [{"strategy": name, "count": k, "params": {}}]}."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    entries = data.get("agents")
    if not isinstance(entries, list) or not entries:
        raise ValueError("roster must contain a non-empty 'agents' list")
    return entries


def build_agents(
    entries: Sequence[dict],
    config: MarketConfig,
    rng: RngStream | None = None,
    expected_count: int | None = None,
) -> list:
    """Instantiate the roster.  Contrarian parameters may carry per-agent
    heterogeneity via ``omega0_sd`` / ``omega1_sd`` draws.  Threshold agents
    accept utility parameters plus the assumed-impact scenario name.

    ``expected_count`` defaults to the full market depth; mixed human/bot
    sessions pass the number of bot seats instead.
    """
    gen = (rng or RngStream(config.seed, 3)).generator()
    agents: list = []
    for entry in entries:
        name = entry.get("strategy")
        if name not in STRATEGIES:
            raise ValueError(f"unknown strategy {name!r}")
        count = int(entry.get("count", 1))
        params = dict(entry.get("params", {}))
        for _ in range(count):
            agents.append(_instantiate(name, params, config, gen))
    expected = config.depth_n if expected_count is None else expected_count
    if len(agents) != expected:
        raise ValueError(
            f"roster defines {len(agents)} agents but depth_n requires {expected}"
        )
    return agents


def _instantiate(name: str, params: dict, config: MarketConfig, gen) -> object:
    if name == "contrarian":
        omega0 = params.get("omega0", 0.0) + gen.normal(0.0, params.get("omega0_sd", 0.0))
        omega1 = params.get("omega1", -0.5) + gen.normal(0.0, params.get("omega1_sd", 0.0))
        return Contrarian(omega0, omega1, params.get("band", 0.03))
    if name == "threshold":
        util = PowerExpoUtility(params.get("alpha_u", 0.106), params.get("r_u", 0.345))
        scenario = Scenario(params.get("impact_assumed", -1.0), include_noise=False)
        curve = critical_threshold(
            util, config, scenario, [config.s],
            mc_paths=params.get("mc_paths", UTILITY_MC_PATHS),
        )
        return ThresholdTrader(util, curve, params.get("reentry_fraction", 0.8))
    if name == "buy_and_hold":
        return BuyAndHold(params.get("emit_forecast", True))
    return STRATEGIES[name]()
