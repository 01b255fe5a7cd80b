"""Session log serialization.

A session log file is UTF-8, line-delimited JSON:

    line 1      header  {"schema": "marketlab.session", "version": 1,
                         "config": {...}}
    lines 2..   one object per round with exactly the RoundRecord fields:
                t, eta, impact, price, n_active, buy_volume, sell_volume,
                per_trader (list of {trader_id, action, position_after,
                cash_after, shares_after, forecast})
    last line   footer  {"end_round": T, "bare_prices": [...],
                         "liquidation": [{trader_id, wealth, net, payout}]}

Decimal amounts (cash, shares, liquidation values) are written as strings so
they survive a round trip exactly; floats use the shortest repr, which makes
rewriting a parsed log byte-identical.  The CSV export flattens to one row
per (round, trader).
"""

from __future__ import annotations

import csv
import json
from decimal import Decimal
from pathlib import Path
from typing import IO

from .config import MarketConfig
from .engine import LiquidationEntry, RoundRecord, SessionLog, TraderSnapshot

__all__ = ["SchemaError", "write_session_log", "read_session_log", "session_log_to_csv"]

SCHEMA = "marketlab.session"
SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Log file does not parse against the expected schema/version."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message if line_number is None
                         else f"line {line_number}: {message}")
        self.line_number = line_number


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _round_to_dict(rec: RoundRecord) -> dict:
    return {
        "t": rec.t,
        "eta": rec.eta,
        "impact": rec.impact,
        "price": rec.price,
        "n_active": rec.n_active,
        "buy_volume": rec.buy_volume,
        "sell_volume": rec.sell_volume,
        "per_trader": [
            {
                "trader_id": s.trader_id,
                "action": s.action,
                "position_after": s.position_after,
                "cash_after": str(s.cash_after),
                "shares_after": str(s.shares_after),
                "forecast": s.forecast,
            }
            for s in rec.per_trader
        ],
    }


def _round_from_dict(data: dict) -> RoundRecord:
    return RoundRecord(
        t=int(data["t"]),
        eta=float(data["eta"]),
        impact=float(data["impact"]),
        price=float(data["price"]),
        n_active=int(data["n_active"]),
        buy_volume=float(data["buy_volume"]),
        sell_volume=float(data["sell_volume"]),
        per_trader=tuple(
            TraderSnapshot(
                trader_id=int(s["trader_id"]),
                action=s["action"],
                position_after=s["position_after"],
                cash_after=Decimal(s["cash_after"]),
                shares_after=Decimal(s["shares_after"]),
                forecast=None if s["forecast"] is None else float(s["forecast"]),
            )
            for s in data["per_trader"]
        ),
    )


def write_session_log(log: SessionLog, path: str | Path | IO[str]) -> None:
    if hasattr(path, "write"):
        _write_stream(log, path)  # type: ignore[arg-type]
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            _write_stream(log, fh)


def _write_stream(log: SessionLog, fh: IO[str]) -> None:
    fh.write(_dumps({
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "config": log.config.to_dict(),
    }) + "\n")
    for rec in log.rounds:
        fh.write(_dumps(_round_to_dict(rec)) + "\n")
    fh.write(_dumps({
        "end_round": log.end_round,
        "bare_prices": log.bare_prices,
        "liquidation": [
            {
                "trader_id": e.trader_id,
                "wealth": str(e.wealth),
                "net": str(e.net),
                "payout": str(e.payout),
            }
            for e in log.liquidation
        ],
    }) + "\n")


def read_session_log(path: str | Path) -> SessionLog:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError("empty log file")

    def parse(line: str, number: int) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"corrupt JSON ({exc.msg})", number) from exc
        if not isinstance(obj, dict):
            raise SchemaError("expected a JSON object", number)
        return obj

    header = parse(lines[0], 1)
    if header.get("schema") != SCHEMA:
        raise SchemaError(f"unexpected schema {header.get('schema')!r}", 1)
    if header.get("version") != SCHEMA_VERSION:
        raise SchemaError(
            f"schema version {header.get('version')!r}, expected {SCHEMA_VERSION}", 1
        )
    if len(lines) < 2:
        raise SchemaError("missing footer line")
    config = MarketConfig.from_dict(header["config"])

    rounds = []
    for number, line in enumerate(lines[1:-1], start=2):
        data = parse(line, number)
        try:
            rounds.append(_round_from_dict(data))
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"bad round record ({exc})", number) from exc

    footer = parse(lines[-1], len(lines))
    try:
        liquidation = [
            LiquidationEntry(
                int(e["trader_id"]),
                Decimal(e["wealth"]),
                Decimal(e["net"]),
                Decimal(e["payout"]),
            )
            for e in footer["liquidation"]
        ]
        log = SessionLog(
            config=config,
            rounds=rounds,
            end_round=int(footer["end_round"]),
            bare_prices=[float(v) for v in footer["bare_prices"]],
            liquidation=liquidation,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"bad footer ({exc})", len(lines)) from exc
    if log.end_round != len(rounds):
        raise SchemaError(
            f"footer end_round {log.end_round} does not match {len(rounds)} round lines"
        )
    return log


_CSV_FIELDS = [
    "t", "trader_id", "action", "position_after", "cash_after", "shares_after",
    "forecast", "eta", "impact", "price",
]


def session_log_to_csv(log: SessionLog, path: str | Path) -> None:
    """One row per (round, trader)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for rec in log.rounds:
            for s in rec.per_trader:
                writer.writerow([
                    rec.t, s.trader_id, s.action, s.position_after,
                    str(s.cash_after), str(s.shares_after),
                    "" if s.forecast is None else repr(s.forecast),
                    repr(rec.eta), repr(rec.impact), repr(rec.price),
                ])
