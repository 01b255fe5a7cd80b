from .config import MarketConfig
from .engine import (
    Action,
    EndTime,
    MarketSession,
    Position,
    RoundRecord,
    SessionLog,
    TraderSnapshot,
    TraderState,
    compute_impact,
    draw_end_time,
    expected_wealth,
    liquidate,
    most_probable_wealth,
    replay_session_log,
    run_session,
    settle_round,
    step_price,
)
from .logio import (
    SchemaError,
    read_session_log,
    session_log_to_csv,
    write_session_log,
)

__all__ = [
    "MarketConfig",
    "Action",
    "Position",
    "TraderState",
    "TraderSnapshot",
    "RoundRecord",
    "SessionLog",
    "EndTime",
    "MarketSession",
    "compute_impact",
    "step_price",
    "settle_round",
    "liquidate",
    "draw_end_time",
    "run_session",
    "replay_session_log",
    "most_probable_wealth",
    "expected_wealth",
    "SchemaError",
    "read_session_log",
    "write_session_log",
    "session_log_to_csv",
]
