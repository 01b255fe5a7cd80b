"""Engine constants for one market session."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

__all__ = ["MarketConfig"]


@dataclass(frozen=True)
class MarketConfig:
    """All constants that pin down a session's price process and accounting.

    ``noise_seed`` lets paired sessions (run 1 / run 2 with the same group)
    share the identical noise realisation while differing elsewhere; it
    defaults to ``seed``.
    """

    m: float = 0.02                 # per-round log drift
    s: float = 0.10                 # per-round volatility
    continuation: float = 0.99      # per-round survival probability
    depth_n: int = 24               # number of traders N (market depth)
    noise_df: int = 3
    noise_cutoff: float = 10.0
    endowment: float = 100.0        # starting cash per trader, francs
    initial_price: float = 100.0
    min_rounds: int = 60            # floor under the pre-drawn end time
    max_rounds: int = 500           # hard cap on the pre-drawn end time
    seed: int = 0
    noise_seed: int | None = None
    round_seconds: float = 20.0

    def __post_init__(self) -> None:
        if not 0.0 < self.continuation < 1.0:
            raise ValueError(f"continuation must lie in (0,1), got {self.continuation}")
        if self.s < 0:
            raise ValueError(f"volatility must be non-negative, got {self.s}")
        if self.depth_n < 1:
            raise ValueError(f"depth_n must be at least 1, got {self.depth_n}")
        if self.endowment <= 0:
            raise ValueError(f"endowment must be positive, got {self.endowment}")
        if self.initial_price <= 0:
            raise ValueError(f"initial_price must be positive, got {self.initial_price}")
        if not 1 <= self.min_rounds <= self.max_rounds:
            raise ValueError(
                f"need 1 <= min_rounds <= max_rounds, got {self.min_rounds}, {self.max_rounds}"
            )

    @property
    def effective_noise_seed(self) -> int:
        return self.seed if self.noise_seed is None else self.noise_seed

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MarketConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "MarketConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
