import asyncio
import json
import time

import pytest

from marketlab.market import MarketConfig, read_session_log
from marketlab.numerics import RngStream
from marketlab.risk import LotteryResponse, default_menu
from marketlab.server import (
    Kind,
    MarketService,
    SessionPlan,
    SessionRuntime,
    compute_payout,
    decode_line,
    encode,
    make_msg,
    resolve_lottery,
    score_forecast,
)
from marketlab.server.protocol import ProtocolError


def bot_plan(session_id, seed=5, rounds=12, depth=4, humans=0, **kw):
    bots = depth - humans
    return SessionPlan(
        session_id=session_id,
        config=MarketConfig(depth_n=depth, seed=seed, round_seconds=kw.pop("round_seconds", 0.2)),
        roster=({"strategy": "alternator", "count": bots},) if bots else (),
        human_seats=humans,
        rounds=rounds,
        **kw,
    )


# --- scoring and payout ---


def test_score_forecast_rules():
    assert score_forecast(100.0, 100.0) == 0.5
    assert score_forecast(110.0, 100.0) == 0.0          # at the 10% band edge
    assert score_forecast(105.0, 100.0) == pytest.approx(0.25)
    assert score_forecast(None, 100.0) == 0.0
    assert score_forecast(-3.0, 100.0) == 0.0
    with pytest.raises(ValueError):
        score_forecast(100.0, 0.0)


def test_payout_arithmetic():
    sessions = [
        {"net": 100.0, "forecast_total": 8.0},
        {"net": -40.0, "forecast_total": 2.0},
    ]
    pay = compute_payout(sessions, dice=2)
    assert pay["eur_total"] == pytest.approx(27.0)
    pay2 = compute_payout(sessions, dice=5)
    assert pay2["selected_session"] == 1
    assert pay2["market_francs"] == 0.0  # floored at zero
    assert pay2["eur_total"] == pytest.approx(0.5)
    with pytest.raises(ValueError, match="dice"):
        compute_payout(sessions, dice=7)
    with pytest.raises(ValueError, match="complete"):
        compute_payout([sessions[0], None], dice=1)


def test_resolve_lottery_deterministic():
    menu = default_menu()
    responses = [
        LotteryResponse("s", "X2", (0,) * 5 + (1,) * 5),
        LotteryResponse("s", "X10", (0,) * 7 + (1,) * 3),
    ]
    a = resolve_lottery(responses, menu, RngStream(9, 0))
    b = resolve_lottery(responses, menu, RngStream(9, 0))
    assert a == b
    assert a["payoff_eur"] > 0
    assert a["scale"] in ("X2", "X10")


# --- runtime ---


def drive_to_completion(runtime):
    while not runtime.finished:
        runtime.open_round(deadline_ms=0)
        runtime.settle()
    return runtime.end_session()


def test_runtime_bots_only_completes(tmp_path):
    runtime = SessionRuntime(bot_plan("s1"), tmp_path)
    summary = drive_to_completion(runtime)
    assert summary["final_price"] > 0
    path = runtime.export_log()
    log = read_session_log(path)
    assert log.end_round == 12


def test_runtime_replay_byte_identical(tmp_path):
    r1 = SessionRuntime(bot_plan("s2"), tmp_path / "a")
    drive_to_completion(r1)
    p1 = r1.export_log()

    # rebuild purely from the event log
    r2 = SessionRuntime(bot_plan("s2"), tmp_path / "a")
    assert r2.finished
    p2 = r2.export_log(tmp_path / "a" / "replayed.ndjson")
    assert p1.read_bytes() == p2.read_bytes()


def test_runtime_crash_injection_resumes_identically(tmp_path):
    plan = bot_plan("s3", rounds=15)
    straight = SessionRuntime(plan, tmp_path / "clean")
    drive_to_completion(straight)
    clean = straight.export_log().read_bytes()

    crashed = SessionRuntime(plan, tmp_path / "crashy")
    for _ in range(7):
        crashed.open_round(deadline_ms=0)
        crashed.settle()
    del crashed  # crash after persist, before any further progress

    resumed = SessionRuntime(plan, tmp_path / "crashy")
    assert resumed.session.t == 7
    drive_to_completion(resumed)
    assert resumed.export_log().read_bytes() == clean


def test_runtime_detects_divergent_log(tmp_path):
    plan = bot_plan("s4", rounds=6)
    runtime = SessionRuntime(plan, tmp_path)
    for _ in range(3):
        runtime.open_round(deadline_ms=0)
        runtime.settle()
    events_path = runtime.events_path
    lines = events_path.read_text().splitlines()
    doctored = json.loads(lines[2])
    doctored["price"] = 123.456
    lines[2] = json.dumps(doctored, separators=(",", ":"))
    events_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="divergence"):
        SessionRuntime(plan, tmp_path)


def test_runtime_submission_rules(tmp_path):
    plan = bot_plan("s5", depth=4, humans=1, rounds=6)
    runtime = SessionRuntime(plan, tmp_path)
    with pytest.raises(RuntimeError, match="no round open"):
        runtime.submit(3, "BUY", None)
    runtime.open_round(deadline_ms=10**15)
    with pytest.raises(ValueError, match="human seat"):
        runtime.submit(0, "BUY", None)
    runtime.submit(3, "BUY", 105.0)
    runtime.submit(3, "NONE", None)  # duplicate: last wins, forecast kept
    record = runtime.settle()
    assert record.per_trader[3].action == "NONE"
    assert record.per_trader[3].forecast == 105.0


def test_practice_plan_runs_ten_rounds(tmp_path):
    plan = bot_plan("s6", rounds=None, practice=True)
    runtime = SessionRuntime(plan, tmp_path)
    drive_to_completion(runtime)
    assert runtime.session.end_round == 10


# --- protocol ---


def test_protocol_roundtrip():
    msg = make_msg(Kind.DECISION, session_id="x", round=3, action="BUY")
    decoded = decode_line(encode(msg))
    assert decoded["kind"] == Kind.DECISION
    assert decoded["round"] == 3


def test_protocol_rejects_bad_version():
    bad = dict(make_msg(Kind.JOIN, session_id="x"))
    bad["v"] = 99
    with pytest.raises(ProtocolError, match="version"):
        decode_line(json.dumps(bad))


def test_protocol_rejects_missing_fields():
    bad = {"kind": Kind.DECISION, "v": 1, "session_id": "x"}
    with pytest.raises(ProtocolError, match="lacks"):
        decode_line(json.dumps(bad))


# --- live service ---


class Client:
    def __init__(self):
        self.reader = None
        self.writer = None
        self.backlog = []

    async def connect(self, host, port):
        self.reader, self.writer = await asyncio.open_connection(host, port)

    async def send(self, msg):
        self.writer.write(encode(msg))
        await self.writer.drain()

    async def recv(self, kind=None, timeout=5.0):
        # waiting for one kind must not drop the others: buffer and replay
        for i, msg in enumerate(self.backlog):
            if kind is None or msg["kind"] == kind:
                return self.backlog.pop(i)
        while True:
            line = await asyncio.wait_for(self.reader.readline(), timeout)
            assert line, "connection closed"
            msg = json.loads(line)
            if kind is None or msg["kind"] == kind:
                return msg
            self.backlog.append(msg)

    async def close(self):
        self.writer.close()
        await self.writer.wait_closed()


async def admin(client, op, **payload):
    await client.send(make_msg(Kind.ADMIN, op=op, **payload))
    return await client.recv(Kind.ACK)


def test_service_bots_only_session(tmp_path):
    async def scenario():
        service = MarketService(tmp_path)
        host, port = await service.start()
        ctl = Client()
        await ctl.connect(host, port)
        plan = bot_plan("live1", rounds=20)
        started = time.monotonic()
        await admin(ctl, "create", plan=plan.to_dict())
        await admin(ctl, "start", session_id="live1")
        while True:
            listing = await admin(ctl, "list")
            if listing["sessions"]["live1"]["finished"]:
                break
            await asyncio.sleep(0.01)
        elapsed = time.monotonic() - started
        ack = await admin(ctl, "export", session_id="live1")
        await ctl.close()
        await service.stop()
        return elapsed, ack["path"]

    elapsed, path = asyncio.run(scenario())
    # liveness: no timer waits for a bots-only session
    assert elapsed < 20 * 0.1
    log = read_session_log(path)
    assert log.end_round == 20


def test_service_human_flow(tmp_path):
    async def scenario():
        service = MarketService(tmp_path)
        host, port = await service.start()
        ctl = Client()
        await ctl.connect(host, port)
        plan = bot_plan("live2", depth=4, humans=1, rounds=3,
                        round_seconds=0.15, lottery=True)
        await admin(ctl, "create", plan=plan.to_dict())

        human = Client()
        await human.connect(host, port)
        await human.send(make_msg(Kind.JOIN, session_id="live2"))
        welcome = await human.recv(Kind.WELCOME)
        assert welcome["trader_id"] == 3
        assert welcome["market"]["m"] == pytest.approx(0.02)
        assert "depth_n" not in welcome["market"]  # market depth stays hidden

        await admin(ctl, "start", session_id="live2")

        # round 1: buy with a forecast
        opened = await human.recv(Kind.ROUND_OPEN)
        assert opened["round"] == 1
        await human.send(make_msg(Kind.DECISION, session_id="live2",
                                  round=1, action="BUY"))
        await human.recv(Kind.ACK)
        await human.send(make_msg(Kind.FORECAST, session_id="live2",
                                  round=1, price=opened["prices"][-1] * 1.02))
        await human.recv(Kind.ACK)
        result1 = await human.recv(Kind.ROUND_RESULT)
        assert result1["your"]["position"] == "IN"
        assert result1["your"]["cash"] == 0.0

        # round 2: stay silent; the deadline passes and the position carries
        opened2 = await human.recv(Kind.ROUND_OPEN)
        result2 = await human.recv(Kind.ROUND_RESULT)
        assert result2["your"]["position"] == "IN"

        # a decision for the settled round is rejected as late
        await human.send(make_msg(Kind.DECISION, session_id="live2",
                                  round=2, action="SELL"))
        err = await human.recv(Kind.ERROR)
        assert err["code"] == "late"

        # round 3: sell out
        opened3 = await human.recv(Kind.ROUND_OPEN)
        await human.send(make_msg(Kind.DECISION, session_id="live2",
                                  round=3, action="SELL"))
        await human.recv(Kind.ACK)
        result3 = await human.recv(Kind.ROUND_RESULT)
        assert result3["your"]["position"] == "OUT"
        assert result3["your"]["cash"] > 0

        ended = await human.recv(Kind.SESSION_END)
        assert ended["your"]["wealth"] == pytest.approx(result3["your"]["cash"])

        task = await human.recv(Kind.LOTTERY_TASK)
        assert len(task["menu"]["pairs"]) == 20
        for pair in task["menu"]["pairs"]:
            await human.send(make_msg(
                Kind.LOTTERY_CHOICE, session_id="live2",
                scale=pair["scale"], index=pair["index"],
                choice=1 if pair["p_high"] >= 0.7 else 0,
            ))
            await human.recv(Kind.ACK)
        payout = await human.recv(Kind.PAYOUT)
        assert payout["eur_total"] == pytest.approx(
            (payout["market_francs"] + payout["forecast_francs"]) * 0.25
            + payout["lottery_eur"]
        )

        await human.close()
        await ctl.close()
        await service.stop()

    asyncio.run(scenario())


def test_service_reconnect_restores_seat(tmp_path):
    async def scenario():
        service = MarketService(tmp_path)
        host, port = await service.start()
        ctl = Client()
        await ctl.connect(host, port)
        plan = bot_plan("live3", depth=3, humans=1, rounds=4, round_seconds=0.1)
        await admin(ctl, "create", plan=plan.to_dict())

        c1 = Client()
        await c1.connect(host, port)
        await c1.send(make_msg(Kind.JOIN, session_id="live3"))
        w1 = await c1.recv(Kind.WELCOME)
        token = w1["seat_token"]
        await c1.close()  # drop mid-setup

        await admin(ctl, "start", session_id="live3")
        await asyncio.sleep(0.15)  # a round passes while disconnected

        c2 = Client()
        await c2.connect(host, port)
        await c2.send(make_msg(Kind.JOIN, session_id="live3", seat_token=token))
        w2 = await c2.recv(Kind.WELCOME)
        assert w2["trader_id"] == w1["trader_id"]
        assert w2["state"]["round"] >= 2
        await c2.close()
        await ctl.close()
        await service.stop()

    asyncio.run(scenario())


def test_ws_gateway_speaks_same_protocol(tmp_path):
    websockets = pytest.importorskip("websockets")

    async def scenario():
        service = MarketService(tmp_path)
        await service.start()
        ws_port = await service.start_ws()
        plan = bot_plan("ws1", depth=2, humans=1, rounds=2, round_seconds=0.1,
                        lottery=False)
        async with websockets.connect(f"ws://127.0.0.1:{ws_port}") as conn:
            await conn.send(encode(make_msg(Kind.ADMIN, op="create",
                                            plan=plan.to_dict())).decode().strip())
            ack = json.loads(await conn.recv())
            assert ack["kind"] == Kind.ACK
            await conn.send(encode(make_msg(Kind.JOIN, session_id="ws1"))
                            .decode().strip())
            welcome = json.loads(await conn.recv())
            assert welcome["kind"] == Kind.WELCOME
            assert welcome["trader_id"] == 1
            await conn.send(encode(make_msg(Kind.ADMIN, op="start",
                                            session_id="ws1")).decode().strip())
            kinds = set()
            for _ in range(8):
                msg = json.loads(await asyncio.wait_for(conn.recv(), 3))
                kinds.add(msg["kind"])
                if msg["kind"] == Kind.SESSION_END:
                    break
            assert Kind.ROUND_OPEN in kinds and Kind.SESSION_END in kinds
        await service.stop()

    asyncio.run(scenario())
