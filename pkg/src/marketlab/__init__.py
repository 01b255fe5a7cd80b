"""Impact-coupled experimental asset market platform.

Subpackages
-----------
numerics   seeded RNG streams, simplex search, BCa bootstrap, rank tests,
           power-law tail fits, symmetric eigendecomposition
market     the deterministic market engine and session log formats
agents     bot strategies and the myopic utility-threshold machinery
analysis   per-session statistics: activity, skewness, synchronization,
           co-position clustering, forecast regressions, tail fits
risk       paired-lottery instrument and the power-expo utility MLE
server     live session orchestration over a line-delimited wire protocol
cli        batch entry points (simulate / analyze / fit-risk / sweep / serve)
"""

__version__ = "0.1.0"
