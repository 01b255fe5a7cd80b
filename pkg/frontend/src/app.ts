// Browser entry point.  Configuration is limited to the server URL and the
// session id / seat token, all taken from the query string:
//   index.html?ws=ws://localhost:7342&session=lab-1&token=<seat token>
// The seat token is kept in sessionStorage so a reload resumes the seat.

import { SessionClient } from "./client.js";
import { render } from "./render.js";
import { WsTransport } from "./transport.js";

const params = new URLSearchParams(window.location.search);
const wsUrl = params.get("ws") ?? "ws://127.0.0.1:7342";
const sessionId = params.get("session") ?? "lab-1";
const tokenKey = `marketlab:${sessionId}:token`;
const seatToken = params.get("token") ?? window.sessionStorage.getItem(tokenKey);

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

const transport = new WsTransport(wsUrl);
const client = new SessionClient(transport, sessionId);

const handlers = {
  onDecision(control: "HOLD" | "BUY" | "SELL") {
    client.decide(control === "HOLD" ? "NONE" : control);
  },
  onForecast(price: number) {
    client.forecast(price);
  },
  onLotteryChoice(scale: string, index: number, choice: 0 | 1) {
    client.chooseLottery(scale, index, choice);
  },
  onLotterySubmit() {
    client.submitLottery();
  },
};

client.subscribe((view) => {
  if (view.seatToken) window.sessionStorage.setItem(tokenKey, view.seatToken);
  render(root, view, handlers);
});

// re-render each second so the countdown ticks between messages
window.setInterval(() => render(root, client.view, handlers), 1000);

transport.ready().then(() => client.join(seatToken ?? undefined));
