"""Batch command line: simulate, analyze, fit-risk, sweep, replay, serve, admin.

Exit codes: 0 success, 2 usage or invalid input, 3 data-integrity failure
(corrupt or mismatched files).  All commands are deterministic given the same
inputs and flags; identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import asyncio
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .agents import build_agents, load_roster
from .analysis import build_session_report, write_report
from .market import (
    MarketConfig,
    SchemaError,
    read_session_log,
    replay_session_log,
    run_session,
    session_log_to_csv,
    write_session_log,
)
from .numerics.rng import RngStream
from .risk import (
    RiskFitError,
    default_menu,
    fit_risk_mle,
    load_menu,
    read_responses_csv,
    safe_choice_summary,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_config(path: str | None, seed: int | None) -> MarketConfig:
    try:
        config = MarketConfig.load(path) if path else MarketConfig()
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot load config: {exc}") from exc
    if seed is not None:
        config = replace(config, seed=seed)
    return config


def cmd_simulate(args) -> int:
    config = _load_config(args.config, args.seed)
    try:
        entries = load_roster(args.roster)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise CommandError(f"invalid roster: {exc}") from exc

    def run_one(cfg: MarketConfig, out: Path) -> None:
        try:
            agents = build_agents(entries, cfg)
        except ValueError as exc:
            raise CommandError(f"invalid roster: {exc}") from exc
        log = run_session(cfg, agents, rounds=args.rounds)
        write_session_log(log, out)
        if args.csv:
            session_log_to_csv(log, out.with_suffix(".csv"))
        print(f"wrote {out} ({log.end_round} rounds)")

    out = Path(args.out)
    if args.pair:
        # paired runs share the noise realisation; everything else reseeds
        noise_seed = config.effective_noise_seed
        first = replace(config, noise_seed=noise_seed)
        second = replace(config, seed=config.seed + 1, noise_seed=noise_seed)
        run_one(first, out.with_suffix(".run1.ndjson"))
        run_one(second, out.with_suffix(".run2.ndjson"))
    else:
        run_one(config, out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.logs:
        raise CommandError("no session logs given")
    out_dir = Path(args.out)
    reports = []
    for path in args.logs:
        try:
            log = read_session_log(path)
        except FileNotFoundError as exc:
            raise CommandError(f"missing log: {exc}") from exc
        except SchemaError as exc:
            raise CommandError(f"{path}: {exc}", EXIT_DATA) from exc
        report = build_session_report(
            log,
            null_replicates=args.null_replicates,
            rng=RngStream(log.config.seed, 29),
        )
        write_report(report, out_dir / Path(path).stem)
        reports.append(report)
        print(f"analyzed {path}")

    aggregate = _aggregate_reports(reports)
    (out_dir / "aggregate.json").write_text(
        json.dumps(aggregate, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {out_dir / 'aggregate.json'}")
    return EXIT_OK


def _aggregate_reports(reports: list[dict]) -> dict:
    """Cross-session averages of the per-session curves and overlaps."""
    agg: dict = {"n_sessions": len(reports)}
    skews = [r["skewness"] for r in reports if "skewness" in r]
    if skews:
        taus = skews[0]["taus"]
        agg["skewness"] = {
            "taus": taus,
            "realized": [
                sum(s["realized"][i] for s in skews) / len(skews)
                for i in range(len(taus))
            ],
            "bare": [
                sum(s["bare"][i] for s in skews) / len(skews)
                for i in range(len(taus))
            ],
        }
    overlaps: dict[str, list[float]] = {}
    for report in reports:
        for variant, section in report.get("synchronization", {}).items():
            if not section.get("degenerate"):
                overlaps.setdefault(variant, []).append(section["overlap"])
    agg["synchronization"] = {
        variant: {"mean_overlap": sum(v) / len(v), "n": len(v)}
        for variant, v in overlaps.items()
    }
    rates = [r["activity"]["mean_rate"] for r in reports]
    wealth = [r["activity"]["mean_final_wealth"] for r in reports]
    agg["activity"] = {
        "mean_rate": sum(rates) / len(rates),
        "mean_final_wealth": sum(wealth) / len(wealth),
    }
    return agg


def cmd_fit_risk(args) -> int:
    try:
        responses = read_responses_csv(args.responses)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read responses: {exc}") from exc
    menu = load_menu(args.menu) if args.menu else default_menu()
    try:
        estimate = fit_risk_mle(
            responses,
            menu,
            keep_inconsistent=args.keep_inconsistent,
            bootstrap_replicates=args.replicates,
            rng=RngStream(args.seed or 0, 31),
        )
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    except RiskFitError as exc:
        raise CommandError(
            f"fit did not converge: {exc} (best {exc.best_params})", EXIT_DATA
        ) from exc

    def ci(interval):
        return None if interval is None else [interval.lower, interval.upper]

    payload = {
        "estimates": {
            "alpha": {"value": estimate.alpha_u, "ci95": ci(estimate.ci_alpha)},
            "r": {"value": estimate.r_u, "ci95": ci(estimate.ci_r)},
            "mu": {"value": estimate.mu, "ci95": ci(estimate.ci_mu)},
        },
        "log_likelihood": estimate.log_likelihood,
        "n_subjects": estimate.n_subjects,
        "n_excluded_responses": estimate.n_excluded,
        "safe_choices": safe_choice_summary(responses),
    }
    out = Path(args.out)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        log = read_session_log(args.log)
    except SchemaError as exc:
        raise CommandError(str(exc), EXIT_DATA) from exc
    rebuilt = replay_session_log(log)
    write_session_log(rebuilt, args.out)
    original = Path(args.log).read_bytes()
    copy = Path(args.out).read_bytes()
    if original != copy:
        raise CommandError("replay diverged from the recorded log", EXIT_DATA)
    print(f"replay of {args.log} is byte-identical")
    return EXIT_OK


def _sweep_cell(payload: dict) -> str:
    config = MarketConfig.from_dict(payload["config"])
    agents = build_agents(payload["roster"], config)
    log = run_session(config, agents, rounds=payload.get("rounds"))
    out = Path(payload["out"])
    write_session_log(log, out)
    return str(out)


def cmd_sweep(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read sweep spec: {exc}") from exc

    s_values = spec.get("s", [0.1])
    depths = spec.get("depth_n", [24])
    mixes = spec.get("mixes")
    seeds = spec.get("seeds", [0])
    replications = int(spec.get("replications", 1))
    if not mixes:
        raise CommandError("sweep spec needs a 'mixes' list of rosters")
    total = len(s_values) * len(depths) * len(mixes) * len(seeds) * replications
    cap = int(spec.get("budget_cap", 1000))
    if total > cap:
        raise CommandError(f"sweep of {total} runs exceeds budget cap {cap}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    for s, depth, (mi, mix), seed, rep in itertools.product(
        s_values, depths, enumerate(mixes), seeds, range(replications)
    ):
        config = MarketConfig(
            s=s, depth_n=depth, seed=seed * 10_000 + rep,
            noise_seed=seed * 10_000 + rep,
        )
        name = f"s{s}_n{depth}_mix{mi}_seed{seed}_rep{rep}.ndjson"
        cells.append({
            "config": config.to_dict(),
            "roster": mix["roster"],
            "rounds": spec.get("rounds"),
            "out": str(out_dir / name),
        })

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            written = list(pool.map(_sweep_cell, cells))
    else:
        written = [_sweep_cell(c) for c in cells]
    index = {"runs": written, "spec": spec}
    (out_dir / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"swept {len(written)} cells into {out_dir}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import MarketService, SessionPlan

    async def main() -> None:
        service = MarketService(args.data, args.host, args.port)
        for plan_path in args.plan or []:
            with open(plan_path, encoding="utf-8") as fh:
                plan = SessionPlan.from_dict(json.load(fh))
            from .server.runtime import SessionRuntime
            from .server.service import _LiveSession

            service.sessions[plan.session_id] = _LiveSession(
                SessionRuntime(plan, service.data_dir)
            )
            print(f"loaded session {plan.session_id}")
        host, port = await service.start()
        print(f"listening on {host}:{port}")
        if args.ws_port is not None:
            ws_port = await service.start_ws(args.ws_port)
            print(f"websocket gateway on {host}:{ws_port}")
        await asyncio.Event().wait()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_admin(args) -> int:
    from .server.protocol import Kind, encode, make_msg

    async def main() -> dict:
        reader, writer = await asyncio.open_connection(args.host, args.port)
        payload: dict = {"op": args.op}
        if args.op == "create":
            with open(args.plan, encoding="utf-8") as fh:
                payload["plan"] = json.load(fh)
        if args.session:
            payload["session_id"] = args.session
        if args.path:
            payload["path"] = args.path
        writer.write(encode(make_msg(Kind.ADMIN, **payload)))
        await writer.drain()
        line = await reader.readline()
        writer.close()
        await writer.wait_closed()
        return json.loads(line)

    reply = asyncio.run(main())
    print(json.dumps(reply, indent=2, sort_keys=True))
    return EXIT_OK if reply.get("kind") == "ACK" else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marketlab",
        description="Impact-coupled asset market: simulation, analysis and live sessions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a bots-only session to a log file")
    p.add_argument("--config", help="MarketConfig JSON file (defaults used if omitted)")
    p.add_argument("--roster", required=True, help="agent roster JSON file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--rounds", type=int, help="fixed round count (otherwise drawn)")
    p.add_argument("--pair", action="store_true",
                   help="write a run1/run2 pair sharing the noise realisation")
    p.add_argument("--csv", action="store_true", help="also write the CSV export")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="run the statistics pipeline over session logs")
    p.add_argument("logs", nargs="*", help="session log files")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--null-replicates", type=int, default=1000)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit-risk", help="estimate utility parameters from lottery responses")
    p.add_argument("responses", help="responses CSV (subject_id, scale, c1..c10)")
    p.add_argument("--menu", help="lottery menu JSON (bundled menu if omitted)")
    p.add_argument("--replicates", type=int, default=200,
                   help="bootstrap replicates (0 skips the intervals)")
    p.add_argument("--keep-inconsistent", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_risk)

    p = sub.add_parser("replay", help="re-run a log through the engine and verify bytes")
    p.add_argument("log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="run a parameter grid of bot sessions")
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="start the live session server")
    p.add_argument("--data", default=os.environ.get("MARKETLAB_DATA"),
                   required="MARKETLAB_DATA" not in os.environ,
                   help="event-log directory (env MARKETLAB_DATA)")
    p.add_argument("--host", default=os.environ.get("MARKETLAB_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("MARKETLAB_PORT", "7341")))
    p.add_argument("--ws-port", type=int,
                   help="also serve a WebSocket gateway (needs marketlab[ws])")
    p.add_argument("--plan", action="append", help="session plan JSON (repeatable)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("admin", help="send one admin command to a running server")
    p.add_argument("op", choices=["create", "start", "abort", "export", "list"])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7341)
    p.add_argument("--plan", help="plan JSON for create")
    p.add_argument("--session", help="session id")
    p.add_argument("--path", help="export path")
    p.set_defaults(func=cmd_admin)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
