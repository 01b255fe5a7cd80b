"""Wire protocol: versioned line-delimited JSON messages.

Framing: one JSON object per UTF-8 line over any full-duplex byte channel
(the bundled transports are TCP and, optionally, WebSocket with one message
per frame).  Every message carries ``kind``, schema version ``v`` and a
server-side UTC millisecond timestamp ``t_ms``.

Participant-facing messages expose exactly what a subject's screen shows:
the price history, their own holdings and forecasts, and deadlines.  Market
depth, the impact term and other traders' actions are never sent.

Client -> server
    JOIN            {session_id, seat_token?}
    DECISION        {session_id, round, action}         last-before-deadline wins
    FORECAST        {session_id, round, price}
    LOTTERY_CHOICE  {session_id, scale, index, choice}
    ADMIN           {op: create|start|abort|export|list|payout, ...}

Server -> client
    WELCOME         {session_id, trader_id, seat_token, market: {...}, state}
    ROUND_OPEN      {session_id, round, deadline_ms, prices, your}
    ROUND_RESULT    {session_id, round, price, log_return, your, forecast_reward}
    SESSION_END     {session_id, final_price, your: {wealth, net, forecast_total}}
    LOTTERY_TASK    {session_id, menu}
    PAYOUT          {session_id, dice, market_francs, forecast_francs,
                     lottery_eur, eur_total}
    ACK / ERROR     {op?, code, message}
"""

from __future__ import annotations

import json
import time

__all__ = ["SCHEMA_VERSION", "Kind", "ProtocolError", "make_msg", "encode", "decode_line"]

SCHEMA_VERSION = 1


class Kind:
    JOIN = "JOIN"
    WELCOME = "WELCOME"
    ROUND_OPEN = "ROUND_OPEN"
    DECISION = "DECISION"
    FORECAST = "FORECAST"
    ROUND_RESULT = "ROUND_RESULT"
    SESSION_END = "SESSION_END"
    LOTTERY_TASK = "LOTTERY_TASK"
    LOTTERY_CHOICE = "LOTTERY_CHOICE"
    PAYOUT = "PAYOUT"
    ADMIN = "ADMIN"
    ACK = "ACK"
    ERROR = "ERROR"


_REQUIRED: dict[str, tuple[str, ...]] = {
    Kind.JOIN: ("session_id",),
    Kind.DECISION: ("session_id", "round", "action"),
    Kind.FORECAST: ("session_id", "round", "price"),
    Kind.LOTTERY_CHOICE: ("session_id", "scale", "index", "choice"),
    Kind.ADMIN: ("op",),
}


class ProtocolError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def now_ms() -> int:
    return int(time.time() * 1000)


def make_msg(kind: str, **payload) -> dict:
    msg = {"kind": kind, "v": SCHEMA_VERSION, "t_ms": now_ms()}
    msg.update(payload)
    return msg


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":"), allow_nan=False) + "\n").encode()


def decode_line(line: bytes | str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("bad_json", f"unparseable message: {exc.msg}") from exc
    if not isinstance(msg, dict) or "kind" not in msg:
        raise ProtocolError("bad_message", "message must be an object with a kind")
    if msg.get("v") != SCHEMA_VERSION:
        raise ProtocolError("bad_version", f"unsupported schema version {msg.get('v')!r}")
    required = _REQUIRED.get(msg["kind"], ())
    missing = [f for f in required if f not in msg]
    if missing:
        raise ProtocolError("missing_fields", f"{msg['kind']} lacks {missing}")
    return msg
