import init, { Simulation, m_spectrum, ratio_refinement } from "./pkg/tdgl_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

let sim = null;
let running = false;

function reset() {
  try {
    sim = new Simulation($("shape").value, num("n"), num("kappa"), num("h"), num("dt"), BigInt(Date.now() % 100000));
  } catch (e) {
    $("status").textContent = String(e);
    sim = null;
    return;
  }
  draw();
}

function draw() {
  const n = sim.width();
  const canvas = $("view");
  canvas.width = n;
  canvas.height = n;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n, n);
  const v = sim.modulus_slice();
  for (let j = 0; j < n; j++) {
    for (let i = 0; i < n; i++) {
      // flip so y points up
      const p = 4 * ((n - 1 - j) * n + i);
      const m = v[j * n + i];
      if (m < 0) {
        img.data.set([255, 255, 255, 255], p);
      } else {
        const s = Math.min(1, m);
        img.data.set([Math.round(255 * s), Math.round(80 * s), Math.round(255 * (1 - s)), 255], p);
      }
    }
  }
  ctx.putImageData(img, 0, 0);
  $("status").textContent = `t = ${sim.time().toFixed(3)}   energy = ${sim.energy().toFixed(6)}`;
}

function frame() {
  if (!running || !sim) return;
  try {
    sim.advance(2);
  } catch (e) {
    running = false;
    $("play").textContent = "play";
    $("status").textContent = String(e);
    return;
  }
  draw();
  requestAnimationFrame(frame);
}

async function main() {
  await init();
  $("reset").onclick = reset;
  $("play").onclick = () => {
    running = !running;
    $("play").textContent = running ? "pause" : "play";
    if (running) requestAnimationFrame(frame);
  };
  $("eigs").onclick = () => {
    $("eout").textContent = "computing...";
    setTimeout(() => {
      try {
        const lam = m_spectrum("box", num("en"), num("ecount"));
        const exact = 1 + Math.PI * Math.PI;
        $("eout").textContent = Array.from(lam, (l) => l.toFixed(6)).join("\n") + `\n\n1 + pi^2 = ${exact.toFixed(6)}`;
      } catch (e) {
        $("eout").textContent = String(e);
      }
    }, 0);
  };
  $("ratio").onclick = () => {
    $("rout").textContent = "computing...";
    setTimeout(() => {
      try {
        const r = ratio_refinement(num("rbase"), num("rlevels"));
        const lines = Array.from(r, (x, i) => `${num("rbase") << i} cells: ${x.toFixed(4)}` + (i ? `  (x${(x / r[i - 1]).toFixed(3)})` : ""));
        $("rout").textContent = lines.join("\n");
      } catch (e) {
        $("rout").textContent = String(e);
      }
    }, 0);
  };
  reset();
}

main();
