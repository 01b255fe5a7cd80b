from .protocol import Kind, ProtocolError, decode_line, encode, make_msg
from .runtime import (
    SessionPlan,
    SessionRuntime,
    compute_payout,
    resolve_lottery,
    score_forecast,
)
from .service import MarketService

__all__ = [
    "Kind",
    "ProtocolError",
    "encode",
    "decode_line",
    "make_msg",
    "SessionPlan",
    "SessionRuntime",
    "score_forecast",
    "compute_payout",
    "resolve_lottery",
    "MarketService",
]
