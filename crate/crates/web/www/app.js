import init, { Demo } from "./pkg/subridge_web.js";

const PHI_S_MAX = 10;
const LAMBDA_MAX = 2;
const GRID = 60;
const $ = (id) => document.getElementById(id);

const SERIES = [
  { row: 1, name: "risk M=1", color: "#d62728" },
  { row: 2, name: "risk M=10", color: "#ff7f0e" },
  { row: 3, name: "risk M=∞", color: "#1f77b4" },
  { row: 4, name: "GCV limit M=∞", color: "#2ca02c", dash: [6, 4] },
  { row: 5, name: "GCV limit M=2", color: "#9467bd", dash: [2, 3] },
];

let demo = null;
let demoKey = "";

function params() {
  return {
    kind: document.querySelector("input[name=model]:checked").value,
    rho: +$("rho").value,
    sigma2: +$("sigma2").value,
    phi: +$("phi").value,
    m: +$("m").value,
    lambda: +$("lambda").value,
  };
}

function ensureDemo(p) {
  const key = `${p.kind}/${p.rho}/${p.sigma2}`;
  if (key !== demoKey) {
    if (demo) demo.free();
    demo = new Demo(p.kind, p.rho, 300, 1.0, p.sigma2);
    demoKey = key;
  }
}

function color(t) {
  const s = Math.max(0, Math.min(1, t));
  const r = Math.round(255 * Math.min(1, 1.6 * s));
  const g = Math.round(255 * Math.max(0, Math.min(1, 1.6 * s - 0.45)));
  const b = Math.round(255 * Math.max(0, 0.55 - s));
  return `rgb(${r},${g},${b})`;
}

function drawHeat(p) {
  const cv = $("heat");
  const ctx = cv.getContext("2d");
  const pad = { l: 40, b: 30, t: 10, r: 10 };
  const w = cv.width - pad.l - pad.r;
  const h = cv.height - pad.t - pad.b;
  const values = demo.risk_surface(p.phi, LAMBDA_MAX, PHI_S_MAX, GRID, GRID, p.m);
  const finite = Array.from(values).filter(Number.isFinite).sort((a, b) => a - b);
  const lo = finite[0];
  const hi = finite[Math.floor(0.95 * (finite.length - 1))];
  ctx.clearRect(0, 0, cv.width, cv.height);
  const cw = w / GRID;
  const ch = h / GRID;
  for (let i = 0; i < GRID; i++) {
    for (let j = 0; j < GRID; j++) {
      const v = values[i * GRID + j];
      ctx.fillStyle = Number.isFinite(v) ? color((v - lo) / (hi - lo)) : "#ccc";
      ctx.fillRect(pad.l + j * cw, pad.t + h - (i + 1) * ch, cw + 0.5, ch + 0.5);
    }
  }
  const x = (s) => pad.l + ((s - p.phi) / (PHI_S_MAX - p.phi)) * w;
  const y = (l) => pad.t + h - (l / LAMBDA_MAX) * h;
  const seg = demo.equivalence_segment(p.phi, 11);
  if (seg.length) {
    ctx.strokeStyle = "#fff";
    ctx.lineWidth = 2;
    ctx.beginPath();
    for (let k = 0; k < seg.length; k += 3) {
      const px = x(seg[k + 1]);
      const py = y(seg[k]);
      k === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    }
    ctx.stroke();
  }
  const opt = demo.optimum(p.phi);
  ctx.fillStyle = "#000";
  for (const [s, l] of [[p.phi, opt[0]], [opt[1], 0]]) {
    if (Number.isFinite(s) && Number.isFinite(l) && l <= LAMBDA_MAX && s <= PHI_S_MAX) {
      ctx.beginPath();
      ctx.arc(x(s), y(l), 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
  axes(ctx, pad, w, h, `φs (${p.phi} … ${PHI_S_MAX})`, `λ (0 … ${LAMBDA_MAX})`);
  $("opt").textContent =
    `λ* = ${fmt(opt[0])}, φs* = ${fmt(opt[1])}, minimum risk ${fmt(opt[2])}; ` +
    `colour range ${fmt(lo)} … ${fmt(hi)}`;
}

function drawCurves(p) {
  const cv = $("curves");
  const ctx = cv.getContext("2d");
  const pad = { l: 45, b: 30, t: 10, r: 10 };
  const w = cv.width - pad.l - pad.r;
  const h = cv.height - pad.t - pad.b;
  const n = 200;
  const data = demo.curves(p.phi, p.lambda, PHI_S_MAX, n);
  const grid = data.subarray(0, n);
  const all = Array.from(data.subarray(n)).filter(Number.isFinite).sort((a, b) => a - b);
  const lo = Math.min(all[0], demo.null_risk()) * 0.95;
  const hi = Math.min(all[Math.floor(0.9 * (all.length - 1))], 4 * demo.null_risk());
  ctx.clearRect(0, 0, cv.width, cv.height);
  const x = (s) => pad.l + ((s - grid[0]) / (grid[n - 1] - grid[0])) * w;
  const y = (r) => pad.t + h - ((r - lo) / (hi - lo)) * h;
  ctx.save();
  ctx.beginPath();
  ctx.rect(pad.l, pad.t, w, h);
  ctx.clip();
  for (const s of SERIES) {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dash || []);
    ctx.lineWidth = 2;
    ctx.beginPath();
    let pen = false;
    for (let i = 0; i < n; i++) {
      const v = data[s.row * n + i];
      if (!Number.isFinite(v)) { pen = false; continue; }
      pen ? ctx.lineTo(x(grid[i]), y(v)) : ctx.moveTo(x(grid[i]), y(v));
      pen = true;
    }
    ctx.stroke();
  }
  ctx.restore();
  axes(ctx, pad, w, h, "φs", `risk (${fmt(lo)} … ${fmt(hi)})`);
}

function axes(ctx, pad, w, h, xl, yl) {
  ctx.setLineDash([]);
  ctx.strokeStyle = "#444";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad.l, pad.t, w, h);
  ctx.fillStyle = "#222";
  ctx.font = "12px system-ui";
  ctx.fillText(xl, pad.l + w / 2 - 30, pad.t + h + 20);
  ctx.save();
  ctx.translate(12, pad.t + h / 2 + 40);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(yl, 0, 0);
  ctx.restore();
}

function fmt(v) {
  return Number.isFinite(v) ? v.toPrecision(4) : "∞";
}

function render() {
  const p = params();
  for (const id of ["rho", "sigma2", "phi", "lambda"]) $(`${id}-v`).textContent = $(id).value;
  try {
    ensureDemo(p);
    drawHeat(p);
    drawCurves(p);
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

await init();
$("legend").innerHTML = SERIES.map((s) => `<span><i style="background:${s.color}"></i>${s.name}</span>`).join("");
for (const el of document.querySelectorAll("input, select")) el.addEventListener("input", render);
render();
