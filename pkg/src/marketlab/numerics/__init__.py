from .rng import RngStream, draw_student_t_unit, student_t_unit_series
from .simplex import SimplexResult, nelder_mead
from .bootstrap import BcaInterval, bca_interval
from .ranktests import hypergeom_tail, mann_whitney_p, welch_t_p
from .tails import TailFit, TailFitError, fit_power_tail
from .eigen import top_eigenvectors

__all__ = [
    "RngStream",
    "draw_student_t_unit",
    "student_t_unit_series",
    "SimplexResult",
    "nelder_mead",
    "BcaInterval",
    "bca_interval",
    "hypergeom_tail",
    "mann_whitney_p",
    "welch_t_p",
    "TailFit",
    "TailFitError",
    "fit_power_tail",
    "top_eigenvectors",
]
