// DOM rendering for the participant screen: price chart (inline SVG),
// history table with returns and holdings, decision radio controls with a
// countdown, forecast entry, end-of-session summary and the lottery form.
// The impact term is never displayed: subjects must judge for themselves
// whether a move is noise or the crowd.

import type { Control, SessionView } from "./state.js";
import { controlsFor, countdownMs, lotteryComplete } from "./state.js";

export interface Handlers {
  onDecision(control: Control): void;
  onForecast(price: number): void;
  onLotteryChoice(scale: string, index: number, choice: 0 | 1): void;
  onLotterySubmit(): void;
}

export function render(root: HTMLElement, view: SessionView, handlers: Handlers): void {
  root.replaceChildren();
  root.appendChild(statusBar(view));
  if (view.phase === "paid" && view.payout) {
    root.appendChild(payoutPanel(view));
    return;
  }
  if (view.phase === "lottery" && view.lottery) {
    root.appendChild(lotteryPanel(view, handlers));
    return;
  }
  root.appendChild(chart(view.prices));
  root.appendChild(historyTable(view));
  if (view.phase === "ended" && view.summary) {
    root.appendChild(summaryPanel(view));
  } else {
    root.appendChild(decisionPanel(view, handlers));
  }
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function statusBar(view: SessionView): HTMLElement {
  const bar = el("div", "status-bar");
  bar.appendChild(el("span", "session", view.sessionId ?? "…"));
  if (view.practice) bar.appendChild(el("span", "practice", "practice session"));
  if (!view.connected) {
    const banner = el("span", "reconnect-banner", "connection lost — reconnecting");
    bar.appendChild(banner);
  }
  if (view.carriedOver) {
    bar.appendChild(el("span", "carried-over", "no decision — position carried over"));
  }
  if (view.lastError) bar.appendChild(el("span", "error", view.lastError));
  return bar;
}

function chart(prices: number[]): HTMLElement {
  const wrap = el("div", "chart");
  const width = 480;
  const height = 160;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));
  if (prices.length >= 2) {
    const lo = Math.min(...prices);
    const hi = Math.max(...prices);
    const span = hi - lo || 1;
    const points = prices
      .map((p, i) => {
        const x = (i / (prices.length - 1)) * (width - 10) + 5;
        const y = height - 5 - ((p - lo) / span) * (height - 10);
        return `${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .join(" ");
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute("points", points);
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", "#2266cc");
    line.setAttribute("stroke-width", "1.5");
    svg.appendChild(line);
  }
  wrap.appendChild(svg);
  return wrap;
}

function historyTable(view: SessionView): HTMLElement {
  const table = el("table", "history") as HTMLTableElement;
  const head = table.createTHead().insertRow();
  for (const h of ["round", "price", "log return", "cash", "shares"]) {
    head.appendChild(el("th", undefined, h));
  }
  const body = table.createTBody();
  const tail = view.prices.slice(-12);
  const offset = view.prices.length - tail.length;
  tail.forEach((price, i) => {
    const t = offset + i;
    const row = body.insertRow();
    row.insertCell().textContent = String(t);
    row.insertCell().textContent = price.toFixed(2);
    const prev = view.prices[t - 1];
    row.insertCell().textContent =
      t > 0 && prev !== undefined ? (Math.log(price / prev) * 100).toFixed(2) + "%" : "";
    const isLast = t === view.prices.length - 1;
    row.insertCell().textContent = isLast ? view.account.cash.toFixed(2) : "";
    row.insertCell().textContent = isLast ? view.account.shares.toFixed(6) : "";
  });
  return table;
}

function decisionPanel(view: SessionView, handlers: Handlers): HTMLElement {
  const panel = el("div", "decision-panel");
  const open = view.phase === "round_open" && view.connected;

  const remaining = countdownMs(view, Date.now());
  panel.appendChild(
    el(
      "div",
      "countdown",
      remaining === null ? "waiting for the next round" : `${(remaining / 1000).toFixed(1)}s left`,
    ),
  );

  const form = el("form", "controls");
  const labels: Record<Control, string> = {
    HOLD: view.account.position === "IN" ? "Hold shares" : "Hold cash",
    BUY: "Buy",
    SELL: "Sell",
  };
  for (const control of controlsFor(view.account.position)) {
    const label = el("label", "control");
    const radio = document.createElement("input");
    radio.type = "radio";
    radio.name = "decision";
    radio.value = control;
    radio.disabled = !open;
    radio.addEventListener("change", () => handlers.onDecision(control));
    label.appendChild(radio);
    label.appendChild(document.createTextNode(labels[control]));
    form.appendChild(label);
  }
  panel.appendChild(form);

  // forecast entry is optional: a decision stands on its own
  const forecastRow = el("div", "forecast");
  const input = document.createElement("input");
  input.type = "number";
  input.step = "0.01";
  input.placeholder = "price forecast (optional)";
  input.disabled = !open;
  input.value = view.forecastDraft;
  const button = document.createElement("button");
  button.type = "button";
  button.textContent = "submit forecast";
  button.disabled = !open;
  button.addEventListener("click", () => {
    const price = Number(input.value);
    if (price > 0) handlers.onForecast(price);
  });
  forecastRow.appendChild(input);
  forecastRow.appendChild(button);
  panel.appendChild(forecastRow);
  return panel;
}

function summaryPanel(view: SessionView): HTMLElement {
  const panel = el("div", "summary");
  const s = view.summary!;
  panel.appendChild(el("h2", undefined, "Session over"));
  panel.appendChild(el("p", undefined, `final wealth: ${s.wealth.toFixed(2)} francs`));
  panel.appendChild(el("p", undefined, `net earnings: ${s.net.toFixed(2)} francs`));
  panel.appendChild(
    el("p", undefined, `forecast rewards: ${s.forecastTotal.toFixed(2)} francs`),
  );
  return panel;
}

function lotteryPanel(view: SessionView, handlers: Handlers): HTMLElement {
  const lottery = view.lottery!;
  const panel = el("div", "lottery");
  panel.appendChild(el("h2", undefined, "Lottery task"));
  panel.appendChild(
    el(
      "p",
      undefined,
      "For each pair pick option A or option B. You can change any answer until the final submit.",
    ),
  );
  for (const pair of lottery.pairs) {
    const key = `${pair.scale}:${pair.index}`;
    const row = el("div", "pair");
    const pct = Math.round(pair.p_high * 100);
    row.appendChild(el("span", "pair-label", `${pair.scale} #${pair.index}`));
    const describe = (outcomes: [number, number][]) =>
      `${pct}%: €${outcomes[0][0].toFixed(2)} / ${100 - pct}%: €${outcomes[1][0].toFixed(2)}`;
    for (const [choice, name, outcomes] of [
      [0, "A", pair.safe],
      [1, "B", pair.risky],
    ] as const) {
      const label = el("label", "option");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = key;
      radio.checked = lottery.selections[key] === choice;
      radio.disabled = lottery.submitted;
      radio.addEventListener("change", () =>
        handlers.onLotteryChoice(pair.scale, pair.index, choice),
      );
      label.appendChild(radio);
      label.appendChild(document.createTextNode(`${name} (${describe(outcomes)})`));
      row.appendChild(label);
    }
    panel.appendChild(row);
  }
  const submit = document.createElement("button");
  submit.type = "button";
  submit.textContent = "submit all answers";
  submit.disabled = lottery.submitted || !lotteryComplete(view);
  submit.addEventListener("click", () => handlers.onLotterySubmit());
  panel.appendChild(submit);
  return panel;
}

function payoutPanel(view: SessionView): HTMLElement {
  const panel = el("div", "payout");
  const p = view.payout!;
  panel.appendChild(el("h2", undefined, "Payout"));
  panel.appendChild(el("p", undefined, `dice roll: ${p.dice}`));
  panel.appendChild(
    el("p", undefined, `market earnings: ${p.marketFrancs.toFixed(2)} francs`),
  );
  panel.appendChild(
    el("p", undefined, `forecast earnings: ${p.forecastFrancs.toFixed(2)} francs`),
  );
  panel.appendChild(el("p", undefined, `lottery: €${p.lotteryEur.toFixed(2)}`));
  panel.appendChild(
    el("p", "total", `total (100 francs = €25): €${p.eurTotal.toFixed(2)}`),
  );
  return panel;
}
