import init, { simulate, auction, utility_curves } from "./pkg/strategic_mapf_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4",
  "#f032e6", "#9a6324", "#469990", "#808000", "#000075", "#aaaa00"];
const color = (i) => COLORS[i % COLORS.length];

function numbers(text) {
  return text.split(",").map((s) => s.trim()).filter((s) => s.length).map(Number);
}

function call(fn, request) {
  return JSON.parse(fn(JSON.stringify(request)));
}

function showError(el, err) {
  el.className = "status error";
  el.textContent = String(err.message ?? err);
}

// Simulation playback

let run = null;
let timer = null;

function drawFrame(t) {
  const canvas = $("grid");
  const ctx = canvas.getContext("2d");
  const s = Math.floor(Math.min(canvas.width / run.width, canvas.height / run.height));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#eee";
  for (let r = 0; r < run.height; r++) {
    for (let c = 0; c < run.width; c++) ctx.strokeRect(c * s, r * s, s, s);
  }
  ctx.fillStyle = "#555";
  for (const [r, c] of run.obstacles) ctx.fillRect(c * s, r * s, s, s);
  run.agents.forEach((a, i) => {
    ctx.strokeStyle = color(i);
    ctx.lineWidth = 2;
    ctx.strokeRect(a.goal[1] * s + 3, a.goal[0] * s + 3, s - 6, s - 6);
  });
  const hits = new Set(run.collisions.filter(([tick]) => tick + 1 === t).map(([, [r, c]]) => `${r},${c}`));
  run.frames[t].forEach(([r, c], i) => {
    const a = run.agents[i];
    if (a.arrival !== null && a.arrival < t) return;
    ctx.fillStyle = color(i);
    ctx.beginPath();
    ctx.arc(c * s + s / 2, r * s + s / 2, s * 0.38, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#fff";
    ctx.font = `${Math.max(8, s * 0.45)}px sans-serif`;
    ctx.textAlign = "center";
    ctx.textBaseline = "middle";
    ctx.fillText(String(a.incentive), c * s + s / 2, r * s + s / 2 + 1);
  });
  ctx.strokeStyle = "#b00";
  ctx.lineWidth = 3;
  for (const key of hits) {
    const [r, c] = key.split(",").map(Number);
    ctx.strokeRect(c * s, r * s, s, s);
  }
  $("tick").value = t;
  $("tick-label").textContent = `tick ${t} / ${run.frames.length - 1}`;
}

function stop() {
  clearInterval(timer);
  timer = null;
  $("play").textContent = "Play";
}

function runSimulation() {
  stop();
  const status = $("sim-status");
  status.className = "status";
  try {
    run = call(simulate, {
      kind: $("kind").value,
      solver: $("solver").value,
      width: +$("width").value,
      height: +$("height").value,
      agents: +$("agents").value,
      gap: +$("gap").value,
      obstacles: +$("obstacles").value,
      incentive_max: +$("vmax").value,
      seed: +$("seed").value,
    });
  } catch (err) {
    run = null;
    $("play").disabled = $("tick").disabled = true;
    return showError(status, err);
  }
  $("tick").max = run.frames.length - 1;
  $("play").disabled = $("tick").disabled = false;
  drawFrame(0);
  const outcome = run.timed_out ? "timed out" : run.completed ? "all agents arrived" : "tick limit reached";
  status.textContent = `${outcome}; ${run.collisions.length} collisions, ${run.auctions} auctions, ` +
    `sum of costs ${run.soc}, welfare ${run.welfare.toFixed(3)}. Numbers on agents are incentives.`;
}

function togglePlay() {
  if (timer) return stop();
  $("play").textContent = "Pause";
  let t = +$("tick").value;
  if (t >= run.frames.length - 1) t = 0;
  timer = setInterval(() => {
    if (t >= run.frames.length) return stop();
    drawFrame(t++);
  }, 250);
}

// Single auction

function runAuction() {
  const out = $("auction-out");
  try {
    const bids = numbers($("bids").value);
    const values = numbers($("values").value);
    const res = call(auction, values.length ? { bids, values } : { bids });
    const rows = bids.map((b, i) => `<tr><td>${i}</td><td>${b}</td><td>${res.turns[i]}</td>` +
      `<td>${res.payments[i].toFixed(4)}</td><td>${res.utilities[i].toFixed(4)}</td></tr>`).join("");
    out.className = "";
    out.innerHTML = `<table><tr><th>agent</th><th>bid</th><th>turn</th><th>payment</th><th>utility</th></tr>` +
      `${rows}</table><div class="status">welfare ${res.welfare.toFixed(4)}</div>`;
  } catch (err) {
    showError(out, err);
  }
}

// Utility curves

function plotCurves() {
  const status = $("curve-status");
  status.className = "status";
  status.textContent = "";
  let res;
  const values = numbers($("curve-values").value);
  try {
    res = call(utility_curves, { values, bid_max: Math.max(15, ...values.map((v) => v * 1.5)) });
  } catch (err) {
    return showError(status, err);
  }
  const canvas = $("chart");
  const ctx = canvas.getContext("2d");
  const pad = 36;
  const all = res.utilities.flat();
  const lo = Math.min(0, ...all);
  const hi = Math.max(...all) * 1.1 || 1;
  const xmax = res.bids[res.bids.length - 1];
  const X = (b) => pad + (b / xmax) * (canvas.width - 2 * pad);
  const Y = (u) => canvas.height - pad - ((u - lo) / (hi - lo)) * (canvas.height - 2 * pad);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(pad, Y(0));
  ctx.lineTo(canvas.width - pad, Y(0));
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, canvas.height - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.textAlign = "center";
  for (let b = 0; b <= xmax; b += Math.max(1, Math.round(xmax / 10))) {
    ctx.fillText(String(b), X(b), canvas.height - pad + 14);
  }
  ctx.fillText("bid", canvas.width / 2, canvas.height - 6);
  res.utilities.forEach((curve, i) => {
    ctx.strokeStyle = color(i);
    ctx.lineWidth = 2;
    ctx.beginPath();
    curve.forEach((u, j) => (j ? ctx.lineTo : ctx.moveTo).call(ctx, X(res.bids[j]), Y(u)));
    ctx.stroke();
    const j = res.bids.findIndex((b) => b >= values[i]);
    if (j >= 0) {
      ctx.fillStyle = color(i);
      ctx.beginPath();
      ctx.arc(X(res.bids[j]), Y(curve[j]), 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  });
  status.textContent = values.map((v, i) => `agent ${i}: value ${v}`).join(", ");
}

await init();
$("run").addEventListener("click", runSimulation);
$("play").addEventListener("click", togglePlay);
$("tick").addEventListener("input", (e) => { stop(); drawFrame(+e.target.value); });
$("auction").addEventListener("click", runAuction);
$("curves").addEventListener("click", plotCurves);
runSimulation();
runAuction();
plotCurves();
