"""Live session service over asyncio TCP (newline-delimited JSON messages).

One authoritative task per session serializes all state changes; connection
handlers only enqueue submissions and receive fan-out broadcasts.  Humans
join with a seat token (assigned on first JOIN, reusable after a disconnect);
a seat that misses a round deadline simply carries its position over.  A
bots-only session never waits for the timer.

An optional WebSocket gateway (``pip install marketlab[ws]``) speaks the same
messages, one JSON text per frame.
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
import math
import secrets
from pathlib import Path

from .protocol import Kind, ProtocolError, decode_line, encode, make_msg, now_ms
from .runtime import SessionPlan, SessionRuntime, compute_payout, score_forecast

__all__ = ["MarketService"]

log = logging.getLogger(__name__)


class _Seat:
    def __init__(self, trader_id: int, token: str):
        self.trader_id = trader_id
        self.token = token
        self.writer = None  # StreamWriter or _WsWriter


class _WsWriter:
    """StreamWriter-shaped adapter over a websocket connection."""

    def __init__(self, conn):
        self.conn = conn
        self._queue: list[bytes] = []

    def write(self, data: bytes) -> None:
        self._queue.append(data)

    async def drain(self) -> None:
        while self._queue:
            await self.conn.send(self._queue.pop(0).decode().rstrip("\n"))

    def close(self) -> None:
        pass

    async def wait_closed(self) -> None:
        pass


class _LiveSession:
    def __init__(self, runtime: SessionRuntime):
        self.runtime = runtime
        self.seats: dict[str, _Seat] = {}
        self.unassigned = list(runtime.human_ids)
        self.task: asyncio.Task | None = None
        self.summary: dict | None = None

    def seat_for_token(self, token: str | None) -> _Seat:
        if token:
            seat = self.seats.get(token)
            if seat is None:
                raise ProtocolError("bad_token", "unknown seat token")
            return seat
        if not self.unassigned:
            raise ProtocolError("session_full", "no free seats")
        trader_id = self.unassigned.pop(0)
        seat = _Seat(trader_id, secrets.token_hex(8))
        self.seats[seat.token] = seat
        return seat


class MarketService:
    """Socket front end for one or more live sessions."""

    def __init__(self, data_dir: str | Path, host: str = "127.0.0.1", port: int = 0):
        self.data_dir = Path(data_dir)
        self.host = host
        self.port = port
        self.sessions: dict[str, _LiveSession] = {}
        self._server: asyncio.AbstractServer | None = None

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        sock = self._server.sockets[0].getsockname()
        log.info("listening on %s:%s", sock[0], sock[1])
        return sock[0], sock[1]

    async def start_ws(self, port: int = 0) -> int:
        """Serve the same protocol over WebSocket, one JSON text per frame.

        Requires the optional ``websockets`` dependency (``marketlab[ws]``);
        browsers cannot open raw TCP sockets.
        """
        import websockets

        async def handler(conn):
            writer = _WsWriter(conn)
            seat: _Seat | None = None
            try:
                async for frame in conn:
                    try:
                        msg = decode_line(frame)
                        seat = await self._dispatch(msg, writer, seat)
                    except ProtocolError as exc:
                        await self._send(writer, make_msg(
                            Kind.ERROR, code=exc.code, message=str(exc)
                        ))
            finally:
                if seat is not None:
                    seat.writer = None

        self._ws_server = await websockets.serve(handler, self.host, port)
        return self._ws_server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        for live in self.sessions.values():
            if live.task:
                live.task.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await live.task
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        ws_server = getattr(self, "_ws_server", None)
        if ws_server:
            ws_server.close()
            await ws_server.wait_closed()

    # --- connection handling ----------------------------------------------

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        seat: _Seat | None = None
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    msg = decode_line(line)
                    seat = await self._dispatch(msg, writer, seat)
                except ProtocolError as exc:
                    await self._send(writer, make_msg(
                        Kind.ERROR, code=exc.code, message=str(exc)
                    ))
        except (ConnectionResetError, asyncio.IncompleteReadError):
            pass
        finally:
            if seat is not None:
                seat.writer = None
            writer.close()
            with contextlib.suppress(Exception):
                await writer.wait_closed()

    async def _send(self, writer: asyncio.StreamWriter, msg: dict) -> None:
        writer.write(encode(msg))
        with contextlib.suppress(ConnectionResetError):
            await writer.drain()

    def _live(self, session_id: str) -> _LiveSession:
        live = self.sessions.get(session_id)
        if live is None:
            raise ProtocolError("no_session", f"unknown session {session_id!r}")
        return live

    async def _dispatch(self, msg, writer, seat: _Seat | None) -> _Seat | None:
        kind = msg["kind"]
        if kind == Kind.ADMIN:
            await self._admin(msg, writer)
            return seat
        if kind == Kind.JOIN:
            live = self._live(msg["session_id"])
            seat = live.seat_for_token(msg.get("seat_token"))
            seat.writer = writer
            state = live.runtime.session.view_for(seat.trader_id)
            cfg = live.runtime.plan.config
            await self._send(writer, make_msg(
                Kind.WELCOME,
                session_id=msg["session_id"],
                trader_id=seat.trader_id,
                seat_token=seat.token,
                practice=live.runtime.plan.practice,
                market={
                    "m": cfg.m,
                    "s": cfg.s,
                    "continuation": cfg.continuation,
                    "endowment": cfg.endowment,
                    "initial_price": cfg.initial_price,
                    "round_seconds": cfg.round_seconds,
                },
                state={
                    "round": live.runtime.current_round,
                    "prices": state.prices,
                    "position": state.position,
                    "cash": state.cash,
                    "shares": state.shares,
                    "ended": live.runtime.ended,
                    # lets a reconnecting client resume the lottery task at
                    # its first unanswered pair
                    "lottery_answered": {
                        scale: [i + 1 for i, c in enumerate(row) if c is not None]
                        for scale, row in live.runtime.lottery_responses.get(
                            seat.trader_id, {}
                        ).items()
                    },
                },
            ))
            return seat
        if seat is None:
            raise ProtocolError("not_joined", "JOIN first")

        live = self._live(msg["session_id"])
        runtime = live.runtime
        if kind in (Kind.DECISION, Kind.FORECAST):
            if not runtime.round_open or msg["round"] != runtime.current_round:
                raise ProtocolError(
                    "late", f"round {msg['round']} is not open for decisions"
                )
            if now_ms() > runtime.deadline_ms:
                raise ProtocolError("late", "past the round deadline")
            if kind == Kind.DECISION:
                runtime.submit(seat.trader_id, msg["action"], None)
            else:
                price = msg["price"]
                runtime.submit(
                    seat.trader_id, None,
                    float(price) if isinstance(price, (int, float)) else None,
                )
            await self._send(writer, make_msg(Kind.ACK, op=kind.lower(),
                                              round=msg["round"]))
            return seat
        if kind == Kind.LOTTERY_CHOICE:
            if not runtime.ended:
                raise ProtocolError("too_early", "lottery opens after the session")
            runtime.submit_lottery(
                seat.trader_id, msg["scale"], int(msg["index"]), int(msg["choice"])
            )
            await self._send(writer, make_msg(Kind.ACK, op="lottery_choice",
                                              scale=msg["scale"], index=msg["index"]))
            if runtime.lottery_complete(seat.trader_id):
                await self._payout(live, seat)
            return seat
        raise ProtocolError("bad_kind", f"unexpected message kind {kind}")

    async def _payout(self, live: _LiveSession, seat: _Seat) -> None:
        runtime = live.runtime
        outcome = runtime.lottery_outcome(seat.trader_id)
        summary = live.summary or runtime.end_session()
        per = summary["per_trader"][seat.trader_id]
        dice = outcome["scale_dice"]
        pay = compute_payout([per], dice, lottery_eur=outcome["payoff_eur"])
        await self._send(seat.writer, make_msg(
            Kind.PAYOUT,
            session_id=runtime.plan.session_id,
            dice=dice,
            lottery=outcome,
            market_francs=pay["market_francs"],
            forecast_francs=pay["forecast_francs"],
            lottery_eur=pay["lottery_eur"],
            eur_total=pay["eur_total"],
        ))

    # --- admin ---------------------------------------------------------------

    async def _admin(self, msg: dict, writer) -> None:
        op = msg["op"]
        if op == "create":
            plan = SessionPlan.from_dict(msg["plan"])
            if plan.session_id in self.sessions:
                raise ProtocolError("exists", f"session {plan.session_id} exists")
            runtime = SessionRuntime(plan, self.data_dir)
            self.sessions[plan.session_id] = _LiveSession(runtime)
            await self._send(writer, make_msg(Kind.ACK, op=op,
                                              session_id=plan.session_id))
        elif op == "start":
            live = self._live(msg["session_id"])
            if live.task is None:
                live.task = asyncio.create_task(self._run(live))
            await self._send(writer, make_msg(Kind.ACK, op=op,
                                              session_id=msg["session_id"]))
        elif op == "abort":
            live = self._live(msg["session_id"])
            live.runtime.abort()
            if live.task:
                live.task.cancel()
            await self._send(writer, make_msg(Kind.ACK, op=op,
                                              session_id=msg["session_id"]))
        elif op == "export":
            live = self._live(msg["session_id"])
            path = live.runtime.export_log(msg.get("path"))
            await self._send(writer, make_msg(Kind.ACK, op=op, path=str(path)))
        elif op == "list":
            await self._send(writer, make_msg(
                Kind.ACK, op=op,
                sessions={
                    sid: {
                        "round": live.runtime.current_round,
                        "end_round": live.runtime.session.end_round,
                        "finished": live.runtime.finished,
                    }
                    for sid, live in self.sessions.items()
                },
            ))
        else:
            raise ProtocolError("bad_op", f"unknown admin op {op!r}")

    # --- session driver --------------------------------------------------------

    async def _broadcast(self, live: _LiveSession, build_msg) -> None:
        for seat in live.seats.values():
            if seat.writer is not None:
                await self._send(seat.writer, build_msg(seat))

    async def _run(self, live: _LiveSession) -> None:
        runtime = live.runtime
        session_id = runtime.plan.session_id
        round_ms = int(runtime.plan.config.round_seconds * 1000)
        try:
            while not runtime.finished:
                deadline = now_ms() + round_ms
                info = runtime.open_round(deadline)
                await self._broadcast(live, lambda seat: make_msg(
                    Kind.ROUND_OPEN,
                    session_id=session_id,
                    round=info["round"],
                    deadline_ms=info["deadline_ms"],
                    prices=info["prices"],
                    your=self._account(runtime, seat.trader_id),
                ))
                # humans may revise until the deadline; a bots-only session
                # settles immediately (the timer short-circuits)
                if runtime.human_ids:
                    await asyncio.sleep(max(0.0, (deadline - now_ms()) / 1000.0))
                record = runtime.settle()
                log_return = math.log(record.price / runtime.session.prices[-2])
                await self._broadcast(live, lambda seat: make_msg(
                    Kind.ROUND_RESULT,
                    session_id=session_id,
                    round=record.t,
                    price=round(record.price, 6),
                    log_return=round(log_return, 9),
                    your=self._account(runtime, seat.trader_id),
                    forecast_reward=round(
                        score_forecast(
                            record.per_trader[seat.trader_id].forecast, record.price
                        ),
                        6,
                    ),
                ))
            live.summary = runtime.end_session()
            await self._broadcast(live, lambda seat: make_msg(
                Kind.SESSION_END,
                session_id=session_id,
                final_price=round(live.summary["final_price"], 6),
                your=live.summary["per_trader"][seat.trader_id],
            ))
            if runtime.plan.lottery and runtime.human_ids:
                await self._broadcast(live, lambda seat: make_msg(
                    Kind.LOTTERY_TASK,
                    session_id=session_id,
                    menu=runtime.lottery_task(),
                ))
        except asyncio.CancelledError:
            raise
        except Exception:
            log.exception("session %s halted", session_id)
            runtime.abort()

    @staticmethod
    def _account(runtime: SessionRuntime, trader_id: int) -> dict:
        view = runtime.session.view_for(trader_id)
        return {
            "position": view.position,
            "cash": view.cash,
            "shares": view.shares,
        }
