"""Power-law tail fitting by KS-minimizing maximum likelihood.

For every candidate tail start r_min (each distinct sample value with enough
points above it) the tail exponent is the continuous MLE

    alpha_hat = 1 + n_tail / sum(log(x_i / r_min)),

and the selected r_min minimizes the Kolmogorov-Smirnov distance between the
empirical tail CDF and the fitted power law (Clauset-style selection).
``alpha_tail`` is the exponent of the fitted density x^(-alpha); the survival
function then decays as x^(1-alpha).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["TailFit", "TailFitError", "fit_power_tail"]

_MIN_SAMPLE = 50
_DEFAULT_MIN_TAIL = 10


class TailFitError(RuntimeError):
    """No candidate tail start admitted a valid fit."""


@dataclass(frozen=True)
class TailFit:
    r_min: float
    alpha_tail: float
    n_tail: int
    ks_distance: float


def fit_power_tail(
    sample: Sequence[float] | np.ndarray,
    min_tail: int = _DEFAULT_MIN_TAIL,
) -> TailFit:
    """Fit the power-law tail of a positive sample.

    Raises
    ------
    ValueError
        On samples smaller than 50 or containing non-positive values.
    TailFitError
        If no candidate r_min leaves at least ``min_tail`` points or every
        candidate is degenerate.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    if x.size < _MIN_SAMPLE:
        raise ValueError(f"need at least {_MIN_SAMPLE} values, got {x.size}")
    if x[0] <= 0:
        raise ValueError("sample must be strictly positive")

    n = x.size
    logs = np.log(x)
    suffix = np.concatenate([np.cumsum(logs[::-1])[::-1], [0.0]])

    best: TailFit | None = None
    for r_min in np.unique(x):
        i = int(np.searchsorted(x, r_min, side="left"))
        k = n - i
        if k < min_tail:
            break
        denom = suffix[i] - k * np.log(r_min)
        if denom <= 0:
            continue
        alpha = 1.0 + k / denom
        tail = x[i:]
        fitted = 1.0 - (tail / r_min) ** (1.0 - alpha)
        grid = np.arange(1, k + 1) / k
        dist = float(
            max(np.abs(grid - fitted).max(), np.abs(grid - 1.0 / k - fitted).max())
        )
        if best is None or dist < best.ks_distance:
            best = TailFit(float(r_min), float(alpha), k, dist)

    if best is None:
        raise TailFitError(
            f"no tail start leaves {min_tail} points with a valid MLE"
        )
    return best
