"""Leading eigenpairs of symmetric matrices (numpy.linalg.eigh backed)."""

from __future__ import annotations

import numpy as np

__all__ = ["top_eigenvectors"]

_SYMMETRY_TOL = 1e-9


def top_eigenvectors(matrix: np.ndarray, k: int) -> list[tuple[float, np.ndarray]]:
    """The k largest eigenvalues with orthonormal eigenvectors, descending.

    The input must be symmetric within 1e-9 (max absolute asymmetry).
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > _SYMMETRY_TOL:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.2e})")
    if not 1 <= k <= a.shape[0]:
        raise ValueError(f"k must lie in [1, {a.shape[0]}], got {k}")
    values, vectors = np.linalg.eigh(a)
    order = np.argsort(values)[::-1][:k]
    return [(float(values[i]), vectors[:, i].copy()) for i in order]
