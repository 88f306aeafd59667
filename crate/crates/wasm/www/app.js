import init, { Bundle } from "./pkg/gtc_wasm.js";

const NX = 140, NY = 128;
const canvas = document.getElementById("plot");
const ctx = canvas.getContext("2d");
const out = document.getElementById("out");

let bundle, bounds, mesh, field, trajectory = null;

const text = (f) => fetch(`bundle/${f}`).then((r) => r.text());

function toPixel([x, y]) {
  const [x0, x1, y0, y1] = bounds;
  return [((x - x0) / (x1 - x0)) * canvas.width, (1 - (y - y0) / (y1 - y0)) * canvas.height];
}

function toState(px, py) {
  const [x0, x1, y0, y1] = bounds;
  return [x0 + (px / canvas.width) * (x1 - x0), y0 + (1 - py / canvas.height) * (y1 - y0)];
}

function colour(v) {
  const s = Math.min(Math.max(v, 0), 1.5) / 1.5;
  return [Math.round(255 * s), Math.round(80 + 120 * s * (1 - s)), Math.round(255 * (1 - s))];
}

function draw() {
  const level = parseFloat(document.getElementById("level").value);
  const img = ctx.createImageData(canvas.width, canvas.height);
  for (let py = 0; py < canvas.height; py++) {
    const j = Math.round((1 - py / (canvas.height - 1)) * (NY - 1));
    for (let px = 0; px < canvas.width; px++) {
      const i = Math.round((px / (canvas.width - 1)) * (NX - 1));
      const v = field[j * NX + i];
      const [r, g, b] = colour(v);
      const k = 4 * (py * canvas.width + px);
      img.data.set([r, g, b, 255], k);
    }
  }
  ctx.putImageData(img, 0, 0);

  ctx.fillStyle = "white";
  for (let j = 0; j < NY - 1; j++) {
    for (let i = 0; i < NX - 1; i++) {
      const a = field[j * NX + i] <= level, b = field[j * NX + i + 1] <= level, c = field[(j + 1) * NX + i] <= level;
      if (a !== b || a !== c) {
        const [x0, x1, y0, y1] = bounds;
        const [px, py] = toPixel([x0 + ((i + 0.5) / (NX - 1)) * (x1 - x0), y0 + ((j + 0.5) / (NY - 1)) * (y1 - y0)]);
        ctx.fillRect(px - 1, py - 1, 2, 2);
      }
    }
  }

  if (document.getElementById("mesh").checked) {
    ctx.strokeStyle = "rgba(255,255,255,0.35)";
    ctx.lineWidth = 1;
    for (const s of mesh.simplices) {
      ctx.beginPath();
      s.forEach((v, k) => {
        const [px, py] = toPixel(mesh.points[v]);
        k === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
      });
      ctx.closePath();
      ctx.stroke();
    }
  }

  if (trajectory) {
    ctx.strokeStyle = "yellow";
    ctx.lineWidth = 2;
    ctx.beginPath();
    trajectory.x.forEach((x, k) => {
      const [px, py] = toPixel(x);
      k === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    });
    ctx.stroke();
  }
}

function report(x0, sim) {
  const fmt = (v) => (v === null || v === undefined ? "-" : v.toFixed(3));
  const umax = Math.max(...sim.u.map((u) => Math.abs(u[0])));
  out.textContent =
    `x0          = (${x0[0].toFixed(3)}, ${x0[1].toFixed(3)})\n` +
    `V̄(x0)       = ${bundle.vbar(new Float64Array(x0)).toFixed(4)}\n` +
    `bound (s)   = ${sim.bound === null ? "none (V̄ ≥ 1)" : fmt(sim.bound)}\n` +
    `reach (s)   = ${sim.reach_time === null ? "goal not reached" : fmt(sim.reach_time)}\n` +
    `within bound: ${sim.satisfied === null ? "-" : sim.satisfied}\n` +
    `max |u|     = ${umax.toFixed(3)}\n` +
    `left box    : ${sim.left_domain}`;
}

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const x0 = toState(ev.clientX - rect.left, ev.clientY - rect.top);
  const horizon = parseFloat(document.getElementById("horizon").value);
  try {
    trajectory = JSON.parse(bundle.simulate(new Float64Array(x0), horizon, 0));
    report(x0, trajectory);
  } catch (e) {
    out.textContent = String(e);
  }
  draw();
});

document.getElementById("mesh").addEventListener("change", draw);
document.getElementById("level").addEventListener("change", draw);

async function main() {
  await init();
  const [cfg, cert, pol] = await Promise.all(["config.toml", "certificate.json", "policy.json"].map(text));
  bundle = new Bundle(cfg, cert, pol);
  bounds = Array.from(bundle.bounds());
  mesh = JSON.parse(bundle.mesh());
  field = bundle.lattice(NX, NY);
  out.textContent = `${mesh.points.length} points, ${mesh.simplices.length} simplices.\nClick the plot to simulate.`;
  draw();
}

main().catch((e) => (out.textContent = String(e)));
