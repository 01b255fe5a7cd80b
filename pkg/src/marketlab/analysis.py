"""Per-session statistics over market logs.

Covers the whole post-session pipeline: activity and wealth summaries,
skewness of aggregated returns, eigen-synchronization of the trader activity
matrix against a permutation null, FDR-validated co-position clustering,
per-trader forecast regressions with rank tests between action states, and
power-law tails of forecasted returns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .market.engine import Action, Position, SessionLog
from .numerics.eigen import top_eigenvectors
from .numerics.ranktests import hypergeom_tail, mann_whitney_p
from .numerics.rng import RngStream
from .numerics.tails import TailFit, TailFitError, fit_power_tail

__all__ = [
    "ActivityMatrix",
    "SyncReport",
    "SkewCurve",
    "ClusterSet",
    "ForecastFit",
    "ACTION_STATES",
    "activity_rate",
    "wealth_activity_correlation",
    "skewness_curve",
    "sync_overlap",
    "conditional_sync",
    "fdr_clusters",
    "fit_forecasts",
    "fit_all_forecasts",
    "compare_fit_distributions",
    "expectation_tails",
    "build_session_report",
    "write_report",
]

VARIANT_ALL = "ALL"
VARIANT_BUY = "BUY_ONLY"
VARIANT_SELL = "SELL_ONLY"

# forecast regressions are fitted per action state
STATE_BUY = "BUY"
STATE_SELL = "SELL"
STATE_HOLD_CASH = "HOLD_CASH"
STATE_HOLD_SHARES = "HOLD_SHARES"
ACTION_STATES = (STATE_BUY, STATE_SELL, STATE_HOLD_CASH, STATE_HOLD_SHARES)

MIN_FIT_OBS = 5


# --- activity -----------------------------------------------------------


@dataclass(frozen=True)
class ActivityMatrix:
    """Trader-by-round activity codes theta in {-1, 0, +1}.

    ``theta[i, j]`` is trader i's code in round ``first_round + j``.  Session
    builders exclude round 1, where the collective entry trade would bias
    every synchronization measure upward.
    """

    theta: np.ndarray
    variant: str = VARIANT_ALL
    first_round: int = 2

    def __post_init__(self) -> None:
        codes = set(np.unique(self.theta).tolist())
        allowed = {
            VARIANT_ALL: {-1, 0, 1},
            VARIANT_BUY: {0, 1},
            VARIANT_SELL: {-1, 0},
        }[self.variant]
        if not codes <= allowed:
            raise ValueError(f"codes {codes} invalid for variant {self.variant}")

    @property
    def n_traders(self) -> int:
        return self.theta.shape[0]

    @property
    def n_rounds(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def from_log(cls, log: SessionLog, variant: str = VARIANT_ALL) -> "ActivityMatrix":
        rows = []
        for trader in range(log.n_traders):
            codes = []
            for rec in log.rounds[1:]:  # round 1 excluded
                action = rec.per_trader[trader].action
                code = 1 if action == Action.BUY else -1 if action == Action.SELL else 0
                if variant == VARIANT_BUY and code == -1:
                    code = 0
                elif variant == VARIANT_SELL and code == 1:
                    code = 0
                codes.append(code)
            rows.append(codes)
        return cls(np.array(rows, dtype=np.int8), variant)


def activity_rate(log: SessionLog, trader: int) -> float:
    """Fraction of rounds in which the trader changed position."""
    if len(log.rounds) < 2:
        raise ValueError("session must have at least 2 rounds")
    if not 0 <= trader < log.n_traders:
        raise ValueError(f"unknown trader {trader}")
    changes = sum(
        1 for rec in log.rounds if rec.per_trader[trader].action != Action.NONE
    )
    return changes / len(log.rounds)


def wealth_activity_correlation(log: SessionLog) -> float:
    """Pearson correlation between final wealth and activity rate."""
    if log.n_traders < 3:
        raise ValueError("need at least 3 traders")
    wealth = np.array([float(e.wealth) for e in log.liquidation])
    rates = np.array([activity_rate(log, i) for i in range(log.n_traders)])
    if wealth.std() == 0 or rates.std() == 0:
        raise ValueError("correlation undefined: zero variance")
    return float(np.corrcoef(wealth, rates)[0, 1])


# --- skewness -----------------------------------------------------------


@dataclass(frozen=True)
class SkewCurve:
    taus: tuple[int, ...]
    skew_combined: tuple[float, ...]
    estimator_tail: tuple[float, ...]    # 1/2 - P(r > mean)
    estimator_median: tuple[float, ...]  # (mean - median) / RMS
    series_label: str = "REALIZED"


def skewness_curve(
    prices: Sequence[float],
    taus: Iterable[int] = range(1, 6),
    series_label: str = "REALIZED",
) -> SkewCurve:
    """Low-moment skewness of tau-aggregated log returns, per tau.

    Two estimators are averaged: the exceedance estimator
    ``1/2 - P(r_tau > mean)`` and ``(mean - median) / RMS``; both are zero
    for symmetric and degenerate samples.  Aggregation uses overlapping
    windows to keep the sample count usable at session lengths near 80.
    """
    p = np.asarray(prices, dtype=float)
    taus = tuple(taus)
    if len(p) <= 5 * max(taus):
        raise ValueError(
            f"price series of length {len(p)} too short for tau up to {max(taus)}"
        )
    returns = np.diff(np.log(p))
    csum = np.concatenate([[0.0], np.cumsum(returns)])
    tail_vals, median_vals, combined = [], [], []
    for tau in taus:
        agg = csum[tau:] - csum[:-tau]
        tail = _tail_estimator(agg)
        med = _median_estimator(agg)
        tail_vals.append(tail)
        median_vals.append(med)
        combined.append((tail + med) / 2.0)
    return SkewCurve(taus, tuple(combined), tuple(tail_vals), tuple(median_vals),
                     series_label)


def _tail_estimator(agg: np.ndarray) -> float:
    if np.all(agg == agg[0]):
        return 0.0
    return float(0.5 - np.mean(agg > agg.mean()))


def _median_estimator(agg: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(agg**2)))
    if rms == 0.0:
        return 0.0
    return float((agg.mean() - np.median(agg)) / rms)


# --- synchronization ------------------------------------------------------


@dataclass(frozen=True)
class SyncReport:
    overlap: float
    eigenvalues: tuple[float, float, float]
    null_mean: float
    null_sd: float
    replicates: int
    degenerate: bool = False


def _activity_correlation(theta: np.ndarray) -> np.ndarray:
    t = theta.shape[1]
    means = theta.mean(axis=1)
    return (theta.astype(float) @ theta.T.astype(float)) / t - np.outer(means, means)


def _max_overlap(theta: np.ndarray) -> tuple[float, tuple[float, float, float]]:
    n = theta.shape[0]
    a = _activity_correlation(theta)
    pairs = top_eigenvectors(a, 3)
    uniform = np.ones(n) / np.sqrt(n)
    overlap = max(abs(float(vec @ uniform)) for _, vec in pairs)
    return overlap, tuple(val for val, _ in pairs)


def sync_overlap(
    activity: ActivityMatrix,
    null_replicates: int = 1000,
    rng: RngStream | np.random.Generator | None = None,
) -> SyncReport:
    """Eigen-synchronization of the activity matrix against a permutation null.

    The statistic is the largest |dot product| between the top-three
    eigenvectors of the activity correlation matrix and the uniform unit
    vector.  The null permutes each trader's activity row independently over
    time, preserving individual activity levels.
    """
    theta = activity.theta
    if activity.n_traders < 3:
        raise ValueError("need at least 3 traders")
    if activity.n_rounds < 10:
        raise ValueError("need at least 10 rounds")
    if not np.any(theta != 0):
        return SyncReport(float("nan"), (0.0, 0.0, 0.0), float("nan"), float("nan"),
                          0, degenerate=True)
    overlap, eigenvalues = _max_overlap(theta)
    if rng is None:
        rng = RngStream(0, 23)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    null_vals = np.empty(null_replicates)
    for b in range(null_replicates):
        permuted = gen.permuted(theta, axis=1)
        null_vals[b] = _max_overlap(permuted)[0]
    return SyncReport(
        overlap=overlap,
        eigenvalues=eigenvalues,
        null_mean=float(null_vals.mean()),
        null_sd=float(null_vals.std()),
        replicates=null_replicates,
    )


def conditional_sync(
    activity: ActivityMatrix,
    bare_prices: Sequence[float],
    condition: str,
    null_replicates: int = 1000,
    rng: RngStream | np.random.Generator | None = None,
) -> SyncReport:
    """Synchronization restricted to rounds following bare returns of one sign.

    A column for round t is kept when the bare return of round t-1 (the last
    move visible when deciding) has the requested sign ("POSITIVE" or
    "NEGATIVE").
    """
    if condition not in ("POSITIVE", "NEGATIVE"):
        raise ValueError(f"condition must be POSITIVE or NEGATIVE, got {condition}")
    bare = np.asarray(bare_prices, dtype=float)
    returns = np.diff(np.log(bare))  # returns[k] = round k+1's bare return
    cols = []
    for j in range(activity.n_rounds):
        t = activity.first_round + j
        prev = returns[t - 2]  # bare return of round t-1
        if (prev > 0) == (condition == "POSITIVE") and prev != 0:
            cols.append(j)
    if len(cols) < 10:
        raise ValueError(
            f"only {len(cols)} rounds follow {condition} returns; need 10"
        )
    restricted = ActivityMatrix(
        activity.theta[:, cols], activity.variant, activity.first_round
    )
    return sync_overlap(restricted, null_replicates, rng)


# --- clustering -----------------------------------------------------------


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[frozenset[int], ...]
    validated_links: tuple[tuple[int, int, float], ...]
    fdr_threshold: float
    skipped_traders: tuple[int, ...] = ()


def fdr_clusters(positions: np.ndarray, threshold: float = 0.01) -> ClusterSet:
    """Cluster traders by co-presence in the market.

    ``positions`` is an N x T boolean (in-market) matrix.  Every pair gets a
    one-sided hypergeometric co-occurrence p-value; Benjamini-Hochberg at
    ``threshold`` selects the validated links; clusters are the connected
    components (singletons omitted).  Traders always in or always out carry
    no co-occurrence signal and are skipped.
    """
    pos = np.asarray(positions).astype(bool)
    n, t = pos.shape
    if t < 20:
        raise ValueError(f"need at least 20 rounds, got {t}")
    counts = pos.sum(axis=1)
    usable = [i for i in range(n) if 0 < counts[i] < t]
    skipped = tuple(i for i in range(n) if i not in usable)

    tested: list[tuple[float, int, int]] = []
    for ai in range(len(usable)):
        for bi in range(ai + 1, len(usable)):
            i, j = usable[ai], usable[bi]
            overlap = int(np.sum(pos[i] & pos[j]))
            p = hypergeom_tail(overlap, int(counts[i]), int(counts[j]), t)
            tested.append((p, i, j))

    links = _benjamini_hochberg(tested, threshold)
    components = _connected_components(links, n)
    return ClusterSet(
        clusters=tuple(components),
        validated_links=tuple((i, j, p) for p, i, j in links),
        fdr_threshold=threshold,
        skipped_traders=skipped,
    )


def _benjamini_hochberg(
    tested: list[tuple[float, int, int]], q: float
) -> list[tuple[float, int, int]]:
    if not tested:
        return []
    ordered = sorted(tested)  # ties broken by pair index
    m = len(ordered)
    cutoff_rank = 0
    for rank, (p, _, _) in enumerate(ordered, start=1):
        if p <= rank * q / m:
            cutoff_rank = rank
    return ordered[:cutoff_rank]


def _connected_components(
    links: list[tuple[float, int, int]], n: int
) -> list[frozenset[int]]:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for _, i, j in links:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, set[int]] = {}
    for x in range(n):
        groups.setdefault(find(x), set()).add(x)
    return sorted(
        (frozenset(g) for g in groups.values() if len(g) > 1),
        key=lambda g: sorted(g),
    )


# --- forecast regressions ---------------------------------------------------


@dataclass(frozen=True)
class ForecastFit:
    trader_id: int
    action_state: str | None
    omega0: float
    omega1: float
    n_obs: int


def _state_of(snapshot) -> str:
    if snapshot.action == Action.BUY:
        return STATE_BUY
    if snapshot.action == Action.SELL:
        return STATE_SELL
    if snapshot.position_after == Position.IN:
        return STATE_HOLD_SHARES
    return STATE_HOLD_CASH


def _forecast_pairs(log: SessionLog, trader: int, action_state: str | None):
    """(previous return, forecasted return) pairs for one trader.

    The forecast submitted in round t predicts p_t, so the forecasted return
    is log(p_hat / p_{t-1}) and the regressor is the last realized return
    log(p_{t-1} / p_{t-2}).  Rounds without a forecast are skipped (price
    prediction was optional).
    """
    prices = log.prices
    xs, ys = [], []
    for rec in log.rounds:
        t = rec.t
        if t < 2:
            continue
        snap = rec.per_trader[trader]
        if snap.forecast is None or snap.forecast <= 0:
            continue
        if action_state is not None and _state_of(snap) != action_state:
            continue
        xs.append(np.log(prices[t - 1] / prices[t - 2]))
        ys.append(np.log(snap.forecast / prices[t - 1]))
    return np.array(xs), np.array(ys)


def fit_forecasts(
    log: SessionLog, trader: int, action_state: str | None
) -> ForecastFit | None:
    """OLS of forecasted on previous returns; None when under 5 observations."""
    if action_state is not None and action_state not in ACTION_STATES:
        raise ValueError(f"unknown action state {action_state!r}")
    x, y = _forecast_pairs(log, trader, action_state)
    if len(x) < MIN_FIT_OBS:
        return None
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return ForecastFit(trader, action_state, float(coef[0]), float(coef[1]), len(x))


def fit_all_forecasts(log: SessionLog) -> list[ForecastFit]:
    fits = []
    for trader in range(log.n_traders):
        for state in ACTION_STATES:
            fit = fit_forecasts(log, trader, state)
            if fit is not None:
                fits.append(fit)
    return fits


def compare_fit_distributions(
    fits: Sequence[ForecastFit], param: str
) -> dict[tuple[str, str], float | None]:
    """Pairwise Mann-Whitney p-values of omega0 or omega1 between states.

    Pairs with fewer than 3 fits on either side are reported as None.
    """
    if param not in ("omega0", "omega1"):
        raise ValueError(f"param must be omega0 or omega1, got {param!r}")
    by_state: dict[str, list[float]] = {s: [] for s in ACTION_STATES}
    for fit in fits:
        if fit.action_state in by_state:
            by_state[fit.action_state].append(getattr(fit, param))
    populated = [s for s in ACTION_STATES if len(by_state[s]) >= 3]
    if len(populated) < 2:
        return {
            (a, b): None
            for k, a in enumerate(ACTION_STATES)
            for b in ACTION_STATES[k + 1:]
        }
    out: dict[tuple[str, str], float | None] = {}
    for k, a in enumerate(ACTION_STATES):
        for b in ACTION_STATES[k + 1:]:
            if len(by_state[a]) >= 3 and len(by_state[b]) >= 3:
                out[a, b] = mann_whitney_p(by_state[a], by_state[b])
            else:
                out[a, b] = None
    return out


def expectation_tails(forecast_returns: Sequence[float], side: str) -> TailFit:
    """Power-law tail of the positive or negative forecasted returns."""
    if side not in ("POSITIVE", "NEGATIVE"):
        raise ValueError(f"side must be POSITIVE or NEGATIVE, got {side!r}")
    r = np.asarray(forecast_returns, dtype=float)
    chosen = r[r > 0] if side == "POSITIVE" else -r[r < 0]
    if chosen.size < 50:
        raise ValueError(f"only {chosen.size} {side} returns; need 50")
    return fit_power_tail(chosen)


# --- session report ---------------------------------------------------------


def _positions_matrix(log: SessionLog) -> np.ndarray:
    return np.array(
        [
            [rec.per_trader[i].position_after == Position.IN for rec in log.rounds]
            for i in range(log.n_traders)
        ],
        dtype=bool,
    )


def _forecast_returns(log: SessionLog) -> np.ndarray:
    prices = log.prices
    vals = []
    for rec in log.rounds:
        for snap in rec.per_trader:
            if snap.forecast is not None and snap.forecast > 0:
                vals.append(np.log(snap.forecast / prices[rec.t - 1]))
    return np.array(vals)


def build_session_report(
    log: SessionLog,
    null_replicates: int = 1000,
    rng: RngStream | None = None,
    fdr_threshold: float = 0.01,
) -> dict:
    """Assemble every pipeline section for one session into a plain dict."""
    rng = rng or RngStream(log.config.seed, 29)
    rates = [activity_rate(log, i) for i in range(log.n_traders)]
    wealth = [float(e.wealth) for e in log.liquidation]
    try:
        correlation = wealth_activity_correlation(log)
    except ValueError:
        correlation = None

    report: dict = {
        "end_round": log.end_round,
        "prices": {
            "realized": log.prices,
            "bare": log.bare_prices,
        },
        "activity": {
            "rates": rates,
            "mean_rate": float(np.mean(rates)),
            "final_wealth": wealth,
            "mean_final_wealth": float(np.mean(wealth)),
            "wealth_activity_correlation": correlation,
        },
    }

    # skewness: drop the entry round from both series so the curves compare
    if log.end_round > 5 * 5 + 1:
        realized = skewness_curve(log.prices[1:], series_label="REALIZED")
        bare = skewness_curve(log.bare_prices[1:], series_label="BARE")
        report["skewness"] = {
            "taus": list(realized.taus),
            "realized": list(realized.skew_combined),
            "bare": list(bare.skew_combined),
        }

    sync_section = {}
    for variant in (VARIANT_ALL, VARIANT_BUY, VARIANT_SELL):
        matrix = ActivityMatrix.from_log(log, variant)
        try:
            rep = sync_overlap(matrix, null_replicates, rng)
        except ValueError:
            continue
        sync_section[variant] = {
            "overlap": rep.overlap,
            "eigenvalues": list(rep.eigenvalues),
            "null_mean": rep.null_mean,
            "null_sd": rep.null_sd,
            "degenerate": rep.degenerate,
        }
        if variant != VARIANT_ALL:
            for condition in ("POSITIVE", "NEGATIVE"):
                try:
                    cond = conditional_sync(
                        matrix, log.bare_prices, condition, null_replicates, rng
                    )
                    sync_section[variant][f"conditional_{condition.lower()}"] = cond.overlap
                except ValueError:
                    pass
    report["synchronization"] = sync_section

    try:
        clusters = fdr_clusters(_positions_matrix(log), fdr_threshold)
        report["clusters"] = {
            "threshold": clusters.fdr_threshold,
            "groups": [sorted(g) for g in clusters.clusters],
            "validated_links": [[i, j, p] for i, j, p in clusters.validated_links],
            "skipped_traders": list(clusters.skipped_traders),
        }
    except ValueError:
        pass

    fits = fit_all_forecasts(log)
    report["forecasts"] = {
        "fits": [
            {
                "trader_id": f.trader_id,
                "action_state": f.action_state,
                "omega0": f.omega0,
                "omega1": f.omega1,
                "n_obs": f.n_obs,
            }
            for f in fits
        ],
        "mann_whitney": {
            param: {
                f"{a}|{b}": p
                for (a, b), p in compare_fit_distributions(fits, param).items()
            }
            for param in ("omega0", "omega1")
        },
    }

    tails = {}
    returns = _forecast_returns(log)
    for side in ("POSITIVE", "NEGATIVE"):
        try:
            fit = expectation_tails(returns, side)
        except (ValueError, TailFitError):
            continue
        tails[side] = {
            "r_min": fit.r_min,
            "alpha_tail": fit.alpha_tail,
            "n_tail": fit.n_tail,
        }
    report["expectation_tails"] = tails
    return report


def write_report(report: dict, out_dir: str | Path) -> None:
    """Emit report.json plus per-table CSV / plot-data files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    activity = report.get("activity", {})
    with open(out / "activity_wealth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trader_id", "activity_rate", "final_wealth"])
        for i, (rate, wealth) in enumerate(
            zip(activity.get("rates", []), activity.get("final_wealth", []))
        ):
            writer.writerow([i, repr(rate), repr(wealth)])

    if "prices" in report:
        with open(out / "prices.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "realized", "bare"])
            series = report["prices"]
            for t, (p, b) in enumerate(zip(series["realized"], series["bare"])):
                writer.writerow([t, repr(p), repr(b)])

    if "skewness" in report:
        with open(out / "skew_curve.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau", "realized", "bare"])
            sk = report["skewness"]
            for tau, r, b in zip(sk["taus"], sk["realized"], sk["bare"]):
                writer.writerow([tau, repr(r), repr(b)])

    if "forecasts" in report:
        with open(out / "forecast_fits.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trader_id", "action_state", "omega0", "omega1", "n_obs"])
            for f in report["forecasts"]["fits"]:
                writer.writerow([
                    f["trader_id"], f["action_state"],
                    repr(f["omega0"]), repr(f["omega1"]), f["n_obs"],
                ])
        for param in ("omega0", "omega1"):
            table = report["forecasts"]["mann_whitney"][param]
            with open(out / f"mw_{param}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["pair", "p_value"])
                for pair, p in table.items():
                    writer.writerow([pair, "" if p is None else repr(p)])
