import init, { Blobs, cluster, quotas, select } from "./pkg/curator_demo.js";

const PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

let state = { xy: null, quality: null, labels: null, quotas: null, selected: null };

function status(msg) {
  $("status").textContent = msg || "";
}

function guard(fn) {
  return () => {
    try {
      status("");
      fn();
    } catch (e) {
      status("error: " + (e.message || String(e)));
    }
    draw();
  };
}

function sizes() {
  const k = num("clusters");
  const s = new Array(k).fill(0);
  for (const l of state.labels) s[l] += 1;
  return s;
}

function draw() {
  const c = $("plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  if (!state.xy) return;
  const xy = state.xy;
  let lo = Infinity, hi = -Infinity;
  for (const v of xy) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const pad = 0.05 * (hi - lo || 1);
  const scale = c.width / (hi - lo + 2 * pad);
  const px = (v) => (v - lo + pad) * scale;
  const chosen = new Set(state.selected || []);
  for (let i = 0; i < xy.length / 2; i++) {
    const x = px(xy[2 * i]);
    const y = c.height - px(xy[2 * i + 1]);
    g.beginPath();
    g.arc(x, y, 2 + 3 * state.quality[i], 0, 2 * Math.PI);
    g.fillStyle = state.labels ? PALETTE[state.labels[i] % PALETTE.length] : "#999";
    g.globalAlpha = chosen.size && !chosen.has(i) ? 0.25 : 0.9;
    g.fill();
    if (chosen.has(i)) {
      g.globalAlpha = 1;
      g.lineWidth = 2;
      g.strokeStyle = "#000";
      g.stroke();
    }
  }
  g.globalAlpha = 1;
}

function table() {
  const t = $("quotas");
  t.innerHTML = "";
  if (!state.labels) return;
  const s = sizes();
  const head = t.insertRow();
  for (const h of ["cluster", "size", "quota"]) head.appendChild(document.createElement("th")).textContent = h;
  s.forEach((size, i) => {
    const r = t.insertRow();
    r.insertCell().textContent = i;
    r.insertCell().textContent = size;
    r.insertCell().textContent = state.quotas ? state.quotas[i] : "";
    r.cells[0].style.color = PALETTE[i % PALETTE.length];
  });
}

const generate = guard(() => {
  const b = new Blobs(num("k"), num("per"), num("spread"), num("seed"));
  state = { xy: b.xy(), quality: b.quality(), labels: null, quotas: null, selected: null };
  b.free();
  table();
});

const doCluster = guard(() => {
  state.labels = Array.from(cluster(state.xy, num("clusters"), num("seed")));
  state.quotas = null;
  state.selected = null;
  table();
});

const doAllocate = guard(() => {
  if (!state.labels) doCluster();
  state.quotas = Array.from(quotas(Uint32Array.from(sizes()), num("alpha")));
  table();
});

const doSelect = guard(() => {
  if (!state.labels) doCluster();
  if (!state.quotas) doAllocate();
  state.selected = Array.from(select(Uint32Array.from(state.labels), state.quality, num("alpha")));
  const mean = (idx) => idx.reduce((a, i) => a + state.quality[i], 0) / idx.length;
  const all = [...state.quality.keys()];
  status(`selected ${state.selected.length}: mean quality ${mean(state.selected).toFixed(3)} vs ${mean(all).toFixed(3)} overall`);
});

await init();
$("gen").onclick = generate;
$("cluster").onclick = doCluster;
$("allocate").onclick = doAllocate;
$("select").onclick = doSelect;
generate();
