"""Nelder-Mead simplex maximization.

A plain downhill-simplex run in maximization form: reflection, expansion,
contraction and shrink with the classic coefficients (1, 2, 0.5, 0.5).
Convergence is declared when the simplex diameter (max vertex distance to the
best vertex) falls below ``tolerance``.  Objectives that return non-finite
values mid-run are treated as -inf so the search backs away from bad regions;
a non-finite value at the start is rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["SimplexResult", "nelder_mead"]

_REFLECT = 1.0
_EXPAND = 2.0
_CONTRACT = 0.5
_SHRINK = 0.5


@dataclass(frozen=True)
class SimplexResult:
    argmax: np.ndarray
    value: float
    iterations: int
    converged: bool


def _diameter(vertices: np.ndarray) -> float:
    best = vertices[0]
    return float(np.max(np.linalg.norm(vertices[1:] - best, axis=1)))


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    tolerance: float = 1e-8,
    max_iter: int = 2000,
    initial_step: float | Sequence[float] = 0.1,
) -> SimplexResult:
    """Maximize ``objective`` from ``start``; returns the best vertex found.

    ``initial_step`` sets the per-coordinate offset used to build the first
    simplex (scalar or one value per dimension).
    """
    x0 = np.asarray(start, dtype=float)
    if x0.ndim != 1 or x0.size < 1:
        raise ValueError("start must be a 1-D parameter vector")
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the start point")

    def safe_eval(x: np.ndarray) -> float:
        v = float(objective(x))
        return v if np.isfinite(v) else -np.inf

    n = x0.size
    steps = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,)).copy()
    steps[steps == 0.0] = 0.1
    vertices = np.vstack([x0] + [x0 + steps[i] * np.eye(n)[i] for i in range(n)])
    values = np.array([f0] + [safe_eval(v) for v in vertices[1:]])

    iterations = 0
    while iterations < max_iter:
        order = np.argsort(values)[::-1]  # best first (maximization)
        vertices, values = vertices[order], values[order]
        if _diameter(vertices) < tolerance:
            return SimplexResult(vertices[0].copy(), float(values[0]), iterations, True)
        iterations += 1

        centroid = vertices[:-1].mean(axis=0)
        worst = vertices[-1]
        reflected = centroid + _REFLECT * (centroid - worst)
        f_reflected = safe_eval(reflected)

        if f_reflected > values[0]:
            expanded = centroid + _EXPAND * (centroid - worst)
            f_expanded = safe_eval(expanded)
            if f_expanded > f_reflected:
                vertices[-1], values[-1] = expanded, f_expanded
            else:
                vertices[-1], values[-1] = reflected, f_reflected
        elif f_reflected > values[-2]:
            vertices[-1], values[-1] = reflected, f_reflected
        else:
            contracted = centroid + _CONTRACT * (worst - centroid)
            f_contracted = safe_eval(contracted)
            if f_contracted > values[-1]:
                vertices[-1], values[-1] = contracted, f_contracted
            else:
                vertices[1:] = vertices[0] + _SHRINK * (vertices[1:] - vertices[0])
                values[1:] = [safe_eval(v) for v in vertices[1:]]

    order = np.argsort(values)[::-1]
    vertices, values = vertices[order], values[order]
    return SimplexResult(vertices[0].copy(), float(values[0]), iterations, False)
