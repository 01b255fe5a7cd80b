// Scripted end-to-end session against the real server: JOIN, twenty rounds
// with gated controls and one deliberate timeout, the two-scale lottery
// flow, and the final payout at the 100-francs-to-EUR-25 rate.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { SessionClient } from "../src/client.js";
import { makeMsg, type ServerMessage } from "../src/protocol.js";
import { controlsFor } from "../src/state.js";
import { TcpTransport } from "./tcp-transport.js";

const SESSION_ID = "browser-e2e";
const ROUNDS = 20;
const ROUND_SECONDS = 0.35;

let server: ChildProcess;
let port: number;

function startServer(): Promise<number> {
  const dataDir = mkdtempSync(join(tmpdir(), "marketlab-e2e-"));
  server = spawn(
    "python3",
    ["-u", "-m", "marketlab.cli", "serve", "--data", dataDir, "--port", "0"],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  return new Promise((resolve, reject) => {
    let out = "";
    server.stdout!.on("data", (chunk) => {
      out += String(chunk);
      const match = out.match(/listening on [\d.]+:(\d+)/);
      if (match) resolve(Number(match[1]));
    });
    server.stderr!.on("data", (chunk) => process.stderr.write(chunk));
    server.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
    setTimeout(() => reject(new Error("server did not start")), 15_000);
  });
}

async function adminCall(op: string, payload: Record<string, unknown>): Promise<void> {
  const transport = await TcpTransport.connect("127.0.0.1", port);
  const reply = new Promise<ServerMessage>((resolve) => {
    transport.onMessage((raw) => resolve(JSON.parse(raw)));
  });
  transport.send(makeMsg("ADMIN", { op, ...payload }));
  const ack = await reply;
  transport.close();
  if (ack.kind !== "ACK") throw new Error(`admin ${op} failed: ${JSON.stringify(ack)}`);
}

beforeAll(async () => {
  port = await startServer();
  await adminCall("create", {
    plan: {
      session_id: SESSION_ID,
      config: {
        depth_n: 6,
        seed: 42,
        round_seconds: ROUND_SECONDS,
      },
      roster: [{ strategy: "alternator", count: 5 }],
      human_seats: 1,
      rounds: ROUNDS,
      lottery: true,
    },
  });
}, 30_000);

afterAll(() => {
  server?.kill();
});

describe("scripted browser client", () => {
  it(
    "completes a 20-round session, the lottery flow and the payout",
    async () => {
      const transport = await TcpTransport.connect("127.0.0.1", port);
      const client = new SessionClient(transport, SESSION_ID);

      const events: ServerMessage[] = [];
      const serverPrices = new Set<number>([]);
      const pending: ServerMessage[] = [];
      let wake: (() => void) | null = null;
      client.subscribe((_view, message) => {
        if (!message) return;
        events.push(message);
        if (message.kind === "WELCOME") {
          for (const p of message.state.prices) serverPrices.add(p);
        } else if (message.kind === "ROUND_OPEN") {
          for (const p of message.prices) serverPrices.add(p);
        } else if (message.kind === "ROUND_RESULT") {
          serverPrices.add(message.price);
        }
        pending.push(message);
        wake?.();
      });

      // consume buffered messages in order; waiting for one kind must not
      // drop the ones that race ahead of it
      async function next<T extends ServerMessage>(
        kind: T["kind"],
        timeoutMs = 10_000,
      ): Promise<T> {
        const deadline = Date.now() + timeoutMs;
        for (;;) {
          const i = pending.findIndex((m) => m.kind === kind);
          if (i >= 0) return pending.splice(i, 1)[0] as T;
          if (Date.now() > deadline) throw new Error(`timed out waiting for ${kind}`);
          await new Promise<void>((resolve) => {
            wake = resolve;
            setTimeout(resolve, 100);
          });
          wake = null;
        }
      }

      client.join();
      const welcome = await next("WELCOME");
      expect(welcome.kind).toBe("WELCOME");
      expect(client.view.traderId).toBe(5);

      await adminCall("start", { session_id: SESSION_ID });

      const timeoutRound = 3; // deliberately let this one lapse
      let buys = 0;
      let sells = 0;
      for (let round = 1; round <= ROUNDS; round++) {
        const open = await next("ROUND_OPEN");
        expect(open.round).toBe(round);

        // control gating follows the position: IN -> {hold, sell},
        // OUT -> {hold, buy}
        const controls = controlsFor(client.view.account.position);
        if (client.view.account.position === "IN") {
          expect(controls).toEqual(["HOLD", "SELL"]);
        } else {
          expect(controls).toEqual(["HOLD", "BUY"]);
        }

        if (round !== timeoutRound) {
          const trade = controls[1]; // BUY when out, SELL when in
          const act = round % 2 === 1 ? trade : "HOLD";
          if (act === "BUY") buys += 1;
          if (act === "SELL") sells += 1;
          expect(client.decide(act === "HOLD" ? "NONE" : act)).toBe(true);
          client.forecast(client.view.prices[client.view.prices.length - 1] * 1.02);
        }

        const result = await next("ROUND_RESULT");
        expect(result.round).toBe(round);
        if (round === timeoutRound) {
          // no decision: the position simply carries over
          expect(client.view.carriedOver).toBe(true);
          expect(result.your.position).toBe(
            (events.findLast(
              (m) => m.kind === "ROUND_RESULT" && m.round === round - 1,
            ) as any).your.position,
          );
        }
      }
      expect(buys).toBeGreaterThan(0);
      expect(sells).toBeGreaterThan(0);

      const end = await next("SESSION_END");
      expect(end.your.wealth).toBeGreaterThan(0);

      // the view never held a price the server did not send
      for (const price of client.view.prices) {
        expect(serverPrices.has(price)).toBe(true);
      }

      // two-scale lottery: answer all twenty pairs (single-switch pattern),
      // edit one answer, then submit
      const task = await next("LOTTERY_TASK");
      expect(task.menu.pairs.length).toBe(20);
      expect(new Set(task.menu.pairs.map((p) => p.scale)).size).toBe(2);
      for (const pair of task.menu.pairs) {
        client.chooseLottery(pair.scale, pair.index, pair.p_high >= 0.6 ? 1 : 0);
      }
      client.chooseLottery("X2", 1, 0); // back-navigation: still editable
      expect(client.nextLotteryPair()).toBeNull();
      const sent = client.submitLottery();
      expect(sent).toBe(20);

      const payout = await next("PAYOUT");
      // valid payout at 100 francs = EUR 25
      expect(payout.eur_total).toBeCloseTo(
        (payout.market_francs + payout.forecast_francs) * 0.25 + payout.lottery_eur,
        6,
      );
      expect(payout.market_francs).toBeGreaterThanOrEqual(0);
      expect(payout.lottery.payoff_eur).toBe(payout.lottery_eur);

      client.close();
    },
    60_000,
  );

  it("resumes the lottery at the first unanswered pair after a reconnect", async () => {
    // fresh session that ends immediately so only the lottery matters
    await adminCall("create", {
      plan: {
        session_id: "resume-e2e",
        config: { depth_n: 3, seed: 9, round_seconds: 0.1 },
        roster: [{ strategy: "alternator", count: 2 }],
        human_seats: 1,
        rounds: 2,
        lottery: true,
      },
    });
    const t1 = await TcpTransport.connect("127.0.0.1", port);
    const c1 = new SessionClient(t1, "resume-e2e");
    const got = (kind: string, client: SessionClient, timeoutMs = 10_000) =>
      new Promise<ServerMessage>((resolve, reject) => {
        client.subscribe((_v, m) => {
          if (m && m.kind === kind) resolve(m);
        });
        setTimeout(() => reject(new Error(`no ${kind}`)), timeoutMs);
      });
    const welcome1 = got("WELCOME", c1);
    c1.join();
    await welcome1;
    const token = c1.view.seatToken!;
    const task = got("LOTTERY_TASK", c1);
    await adminCall("start", { session_id: "resume-e2e" });
    await task;
    // answer the first three pairs directly, then drop the connection
    for (const pair of c1.view.lottery!.pairs.slice(0, 3)) {
      t1.send(
        makeMsg("LOTTERY_CHOICE", {
          session_id: "resume-e2e",
          scale: pair.scale,
          index: pair.index,
          choice: 0,
        }),
      );
    }
    await new Promise((r) => setTimeout(r, 300)); // let the acks land
    c1.close();

    const t2 = await TcpTransport.connect("127.0.0.1", port);
    const c2 = new SessionClient(t2, "resume-e2e");
    const welcome2 = got("WELCOME", c2);
    c2.join(token);
    const w2 = (await welcome2) as Extract<ServerMessage, { kind: "WELCOME" }>;
    const answered = w2.state.lottery_answered!;
    expect(answered["X2"]).toEqual([1, 2, 3]);
    c2.close();
  }, 30_000);
});
