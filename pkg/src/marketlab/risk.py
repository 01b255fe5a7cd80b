"""Paired-lottery risk elicitation and power-expo utility estimation.

Each subject faces ten lottery pairs per payoff scale: option A (safe) versus
option B (risky), with the high-outcome probability stepping from 0.1 to 1.0.
The count of safe choices measures risk aversion; under the logit choice rule

    P_risky(i) = E[U_risky]^(1/mu) / (E[U_risky]^(1/mu) + E[U_safe]^(1/mu))

with the power-expo utility U(w) = (1 - exp(-alpha w^(1-r))) / alpha, the
parameters (r, alpha, mu) are estimated by maximum likelihood (simplex search
with restarts under a log reparameterization) and BCa bootstrap intervals over
subjects.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics.bootstrap import BcaInterval, bca_from_replicates
from .numerics.ranktests import welch_t_p
from .numerics.rng import RngStream
from .numerics.simplex import nelder_mead

__all__ = [
    "LotteryPair",
    "LotteryMenu",
    "LotteryResponse",
    "RiskEstimate",
    "RiskFitError",
    "load_menu",
    "default_menu",
    "power_expo_eu",
    "choice_probability",
    "is_consistent",
    "fit_risk_mle",
    "safe_choice_summary",
    "read_responses_csv",
    "write_responses_csv",
]

log = logging.getLogger(__name__)

RISK_NEUTRAL_SAFE_COUNT = 4  # expected-value maximizers switch after pair 4

# search bounds for (alpha, r, mu); the simplex runs on log-parameters
_BOUNDS = {"alpha": (1e-4, 5.0), "r": (1e-4, 0.99), "mu": (1e-3, 10.0)}
_RESTARTS = 10


@dataclass(frozen=True)
class LotteryPair:
    index: int                    # 1..10; high-outcome probability = index/10
    safe: tuple[tuple[float, float], tuple[float, float]]   # (payoff, prob)
    risky: tuple[tuple[float, float], tuple[float, float]]
    scale: str

    def __post_init__(self) -> None:
        for payoff, _ in self.safe + self.risky:
            if payoff <= 0:
                raise ValueError("lottery payoffs must be positive")
        var_safe = _lottery_variance(self.safe)
        var_risky = _lottery_variance(self.risky)
        if var_safe > var_risky + 1e-12:
            raise ValueError("safe option must have the lower payoff variance")


def _lottery_variance(outcomes) -> float:
    mean = sum(p * w for w, p in outcomes)
    return sum(p * (w - mean) ** 2 for w, p in outcomes)


@dataclass(frozen=True)
class LotteryMenu:
    pairs: tuple[LotteryPair, ...]

    def for_scale(self, scale: str) -> tuple[LotteryPair, ...]:
        return tuple(p for p in self.pairs if p.scale == scale)

    @property
    def scales(self) -> tuple[str, ...]:
        seen = []
        for p in self.pairs:
            if p.scale not in seen:
                seen.append(p.scale)
        return tuple(seen)


def load_menu(path: str | Path) -> LotteryMenu:
    with open(path, encoding="utf-8") as fh:
        return _menu_from_dict(json.load(fh))


def default_menu() -> LotteryMenu:
    ref = resources.files("marketlab.data").joinpath("lottery_menu.json")
    return _menu_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def _menu_from_dict(data: dict) -> LotteryMenu:
    base = data["baseline"]
    pairs = []
    for scale_name, mult in data["scales"].items():
        for entry in data["pairs"]:
            p = float(entry["p_high"])
            if not 0.0 < p <= 1.0:
                raise ValueError(f"p_high must lie in (0,1], got {p}")
            pairs.append(
                LotteryPair(
                    index=int(entry["index"]),
                    safe=((base["safe_high"] * mult, p), (base["safe_low"] * mult, 1 - p)),
                    risky=((base["risky_high"] * mult, p), (base["risky_low"] * mult, 1 - p)),
                    scale=scale_name,
                )
            )
    return LotteryMenu(tuple(pairs))


@dataclass(frozen=True)
class LotteryResponse:
    subject_id: str
    scale: str
    choices: tuple[int, ...]  # ten 0/1 flags; 1 = risky option

    def __post_init__(self) -> None:
        if len(self.choices) != 10 or any(c not in (0, 1) for c in self.choices):
            raise ValueError("choices must be ten 0/1 flags")

    @property
    def safe_count(self) -> int:
        return 10 - sum(self.choices)


def is_consistent(response: LotteryResponse) -> bool:
    """A single switch point: never back to safe after choosing risky.

    Later pairs only raise the risky option's appeal, so reverting to the
    safe lottery after a risky choice at a lower index is incoherent; such
    subjects are excluded by default (retained under a flag).
    """
    seen_risky = False
    for c in response.choices:
        if c == 1:
            seen_risky = True
        elif seen_risky:
            return False
    return True


# --- choice model -----------------------------------------------------------


def power_expo_eu(alpha: float, r: float, outcomes) -> float:
    """Expected power-expo utility of a two-outcome lottery."""
    return float(
        sum(p * (1.0 - np.exp(-alpha * w ** (1.0 - r))) / alpha for w, p in outcomes)
    )


def choice_probability(
    util_params: tuple[float, float], mu: float, pair: LotteryPair
) -> float:
    """Logit probability of picking the risky option (log-space exponents)."""
    alpha, r = util_params
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    log_eu_risky = np.log(power_expo_eu(alpha, r, pair.risky))
    log_eu_safe = np.log(power_expo_eu(alpha, r, pair.safe))
    gap = (log_eu_safe - log_eu_risky) / mu
    return float(1.0 / (1.0 + np.exp(gap)))


@dataclass(frozen=True)
class RiskEstimate:
    alpha_u: float
    r_u: float
    mu: float
    ci_alpha: BcaInterval | None
    ci_r: BcaInterval | None
    ci_mu: BcaInterval | None
    log_likelihood: float
    n_subjects: int
    n_excluded: int


class RiskFitError(RuntimeError):
    """Likelihood maximization ran to the parameter boundary or failed.

    Carries the best parameters found in ``best_params`` = (alpha, r, mu).
    """

    def __init__(self, message: str, best_params: tuple[float, float, float]):
        super().__init__(message)
        self.best_params = best_params


class _MenuArrays:
    """Menu payoffs unpacked to columns so one likelihood evaluation is a
    handful of vector operations over all pairs."""

    def __init__(self, menu: LotteryMenu):
        self.key = {(p.scale, p.index): k for k, p in enumerate(menu.pairs)}
        self.p_high = np.array([p.safe[0][1] for p in menu.pairs])
        self.safe_high = np.array([p.safe[0][0] for p in menu.pairs])
        self.safe_low = np.array([p.safe[1][0] for p in menu.pairs])
        self.risky_high = np.array([p.risky[0][0] for p in menu.pairs])
        self.risky_low = np.array([p.risky[1][0] for p in menu.pairs])

    def counts(
        self, responses: Sequence[LotteryResponse]
    ) -> tuple[np.ndarray, np.ndarray]:
        risky = np.zeros(len(self.p_high))
        total = np.zeros(len(self.p_high))
        for resp in responses:
            for i, c in enumerate(resp.choices, start=1):
                k = self.key.get((resp.scale, i))
                if k is None:
                    raise ValueError(
                        f"response references unknown pair {resp.scale}/{i}"
                    )
                risky[k] += c
                total[k] += 1
        return risky, total

    def log_likelihood(self, theta: np.ndarray, risky, total) -> float:
        alpha, r, mu = np.exp(theta)
        lo_a, hi_a = _BOUNDS["alpha"]
        lo_r, hi_r = _BOUNDS["r"]
        lo_m, hi_m = _BOUNDS["mu"]
        if not (lo_a <= alpha <= hi_a and lo_r <= r <= hi_r and lo_m <= mu <= hi_m):
            return -np.inf

        def u(w):
            return (1.0 - np.exp(-alpha * w ** (1.0 - r))) / alpha

        eu_safe = self.p_high * u(self.safe_high) + (1 - self.p_high) * u(self.safe_low)
        eu_risky = self.p_high * u(self.risky_high) + (1 - self.p_high) * u(self.risky_low)
        gap = (np.log(eu_safe) - np.log(eu_risky)) / mu
        log_p_risky = -np.logaddexp(0.0, gap)
        log_p_safe = -np.logaddexp(0.0, -gap)
        return float(np.sum(risky * log_p_risky + (total - risky) * log_p_safe))


def _maximize(arrays: _MenuArrays, risky, total, gen, restarts: int = _RESTARTS):
    start = np.log([0.1, 0.3, 0.15])
    best = None
    for attempt in range(restarts):
        x0 = start if attempt == 0 else start + gen.normal(0.0, 0.5, size=3)
        if not np.isfinite(arrays.log_likelihood(x0, risky, total)):
            continue
        res = nelder_mead(
            lambda th: arrays.log_likelihood(th, risky, total),
            x0,
            tolerance=1e-9,
            max_iter=3000,
            initial_step=0.2,
        )
        if best is None or res.value > best.value:
            best = res
    return best


def _near_bounds(alpha: float, r: float, mu: float, rel: float = 0.02) -> bool:
    for value, (lo, hi) in zip((alpha, r, mu), _BOUNDS.values()):
        if value <= lo * (1 + rel) or value >= hi * (1 - rel):
            return True
    return False


def fit_risk_mle(
    responses: Sequence[LotteryResponse],
    menu: LotteryMenu | None = None,
    *,
    keep_inconsistent: bool = False,
    bootstrap_replicates: int = 200,
    level: float = 0.95,
    rng: RngStream | None = None,
) -> RiskEstimate:
    """Maximum-likelihood (alpha, r, mu) with BCa intervals over subjects.

    Inconsistent responders (safe after risky) are dropped unless
    ``keep_inconsistent``; at least 10 subjects must remain.  Bootstrap
    refits warm-start from the full-sample optimum with a single simplex
    run each, which keeps 200 replicates plus the jackknife tractable.
    ``bootstrap_replicates=0`` skips the intervals (point estimates only).
    """
    menu = menu or default_menu()
    rng = rng or RngStream(0, 31)
    screened = [r_ for r_ in responses if keep_inconsistent or is_consistent(r_)]
    n_excluded = len(responses) - len(screened)
    subjects = sorted({r_.subject_id for r_ in screened})
    if len(subjects) < 10:
        raise ValueError(
            f"need at least 10 subjects after screening, got {len(subjects)}"
        )

    by_subject = {s: [r_ for r_ in screened if r_.subject_id == s] for s in subjects}
    gen = rng.generator()
    arrays = _MenuArrays(menu)

    risky, total = arrays.counts(screened)
    best = _maximize(arrays, risky, total, gen)
    if best is None:
        raise RiskFitError("no finite starting point", (np.nan, np.nan, np.nan))
    alpha, r, mu = np.exp(best.argmax)
    if not best.converged or _near_bounds(alpha, r, mu):
        raise RiskFitError(
            f"estimate ran to the boundary: alpha={alpha:.4g}, r={r:.4g}, mu={mu:.4g}",
            (float(alpha), float(r), float(mu)),
        )

    warm = best.argmax
    if bootstrap_replicates == 0:
        return RiskEstimate(
            alpha_u=float(alpha),
            r_u=float(r),
            mu=float(mu),
            ci_alpha=None,
            ci_r=None,
            ci_mu=None,
            log_likelihood=float(best.value),
            n_subjects=len(subjects),
            n_excluded=n_excluded,
        )

    # per-subject count matrices let a resample be summed, not re-parsed
    subj_counts = {
        s: arrays.counts(by_subject[s]) for s in subjects
    }

    def refit(subject_list) -> np.ndarray:
        risky_ = np.zeros_like(risky)
        total_ = np.zeros_like(total)
        for s in subject_list:
            rs, ts = subj_counts[s]
            risky_ += rs
            total_ += ts
        res = nelder_mead(
            lambda th: arrays.log_likelihood(th, risky_, total_),
            warm,
            tolerance=1e-7,
            max_iter=800,
            initial_step=0.05,
        )
        return np.exp(res.argmax)

    # one resampling pass shared by the three parameter intervals
    n = len(subjects)
    boot = np.empty((bootstrap_replicates, 3))
    for b in range(bootstrap_replicates):
        idx = gen.integers(0, n, size=n)
        boot[b] = refit([subjects[i] for i in idx])
    jack = np.empty((n, 3))
    for i in range(n):
        jack[i] = refit([s for k, s in enumerate(subjects) if k != i])

    point = np.array([alpha, r, mu])
    cis = [
        bca_from_replicates(float(point[c]), boot[:, c], jack[:, c], level)
        for c in range(3)
    ]

    return RiskEstimate(
        alpha_u=float(alpha),
        r_u=float(r),
        mu=float(mu),
        ci_alpha=cis[0],
        ci_r=cis[1],
        ci_mu=cis[2],
        log_likelihood=float(best.value),
        n_subjects=len(subjects),
        n_excluded=n_excluded,
    )


def safe_choice_summary(responses: Sequence[LotteryResponse]) -> dict:
    """Per-scale distribution of safe-choice counts.

    Reports each scale's empirical CDF, the risk-averse fraction (more than
    4 safe choices), and the Welch two-sample t-test p-value between scales
    when exactly two are present.
    """
    by_scale: dict[str, list[int]] = {}
    for resp in responses:
        by_scale.setdefault(resp.scale, []).append(resp.safe_count)
    summary: dict = {"scales": {}}
    for scale, counts in sorted(by_scale.items()):
        arr = np.array(counts)
        summary["scales"][scale] = {
            "n": len(arr),
            "mean": float(arr.mean()),
            "cdf": {str(k): float(np.mean(arr <= k)) for k in range(11)},
            "fraction_risk_averse": float(np.mean(arr > RISK_NEUTRAL_SAFE_COUNT)),
        }
    scales = sorted(by_scale)
    if len(scales) == 2 and all(len(by_scale[s]) >= 2 for s in scales):
        summary["welch_p"] = welch_t_p(by_scale[scales[0]], by_scale[scales[1]])
    return summary


# --- response files ----------------------------------------------------------


_CSV_HEADER = ["subject_id", "scale"] + [f"c{i}" for i in range(1, 11)]


def read_responses_csv(path: str | Path) -> list[LotteryResponse]:
    """One row per subject per scale: subject_id, scale, c1..c10 (1 = risky)."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(_CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"response file missing columns: {sorted(missing)}")
        for row in reader:
            choices = tuple(int(row[f"c{i}"]) for i in range(1, 11))
            out.append(LotteryResponse(row["subject_id"], row["scale"], choices))
    return out


def write_responses_csv(responses: Sequence[LotteryResponse], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for resp in responses:
            writer.writerow([resp.subject_id, resp.scale, *resp.choices])
