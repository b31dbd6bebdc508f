import init, { receptive_field, fusion, fusion_curves, ToyDenoiser } from "./pkg/blindspot_web.js";

const $ = (id) => document.getElementById(id);

function blit(canvas, rgba, size) {
  canvas.width = size;
  canvas.height = size;
  const img = new ImageData(new Uint8ClampedArray(rgba), size, size);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function drawFootprint() {
  const depth = Number($("rf-depth").value);
  $("rf-depth-v").textContent = depth;
  const fp = receptive_field(depth, 4);
  const canvas = $("rf-canvas");
  const off = document.createElement("canvas");
  blit(off, fp.rgba(), fp.size);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  $("rf-info").textContent =
    `footprint ${fp.width}x${fp.height}, center gradient ${fp.center}`;
  fp.free();
}

function drawFusion() {
  const mu = Number($("f-mu").value);
  const ps = Number($("f-ps").value);
  const y = Number($("f-y").value);
  const ns = Number($("f-ns").value);
  const n = 400, lo = -0.25, hi = 1.25;
  const c = fusion_curves(mu, ps, y, ns, lo, hi, n);
  const [m, p] = fusion(mu, ps, y, ns);
  const canvas = $("f-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let top = 0;
  for (let k = 1; k < 4; k++) {
    for (let i = 0; i < n; i++) {
      const v = c[k * n + i];
      if (Number.isFinite(v)) top = Math.max(top, v);
    }
  }
  const colors = ["#36c", "#c63", "#2a2"];
  for (let k = 1; k < 4; k++) {
    ctx.strokeStyle = colors[k - 1];
    ctx.lineWidth = k === 3 ? 2.5 : 1.5;
    ctx.beginPath();
    for (let i = 0; i < n; i++) {
      const x = ((c[i] - lo) / (hi - lo)) * canvas.width;
      const v = c[k * n + i];
      const yy = canvas.height - 10 - (Number.isFinite(v) ? v / top : 1) * (canvas.height - 20);
      i === 0 ? ctx.moveTo(x, yy) : ctx.lineTo(x, yy);
    }
    ctx.stroke();
  }
  $("f-info").innerHTML =
    `<span style="color:#36c">prior</span>, <span style="color:#c63">likelihood</span>, ` +
    `<span style="color:#2a2">posterior</span>: mean ${m.toFixed(4)}, std ${Math.sqrt(p).toFixed(4)}`;
}

let toy = null;
let running = false;

function renderToy() {
  for (const kind of ["clean", "noisy", "mean", "posterior"]) {
    blit($(`t-${kind}`), toy.rgba(kind), toy.size);
  }
  for (const kind of ["noisy", "mean", "posterior"]) {
    const label = kind === "mean" ? "prior mean" : kind;
    $(`c-${kind}`).textContent = `${label}, ${toy.psnr(kind).toFixed(2)} dB`;
  }
}

function resetToy() {
  running = false;
  $("t-run").textContent = "Train";
  if (toy) toy.free();
  toy = new ToyDenoiser(Number($("t-seed").value), Number($("t-sigma").value));
  $("t-info").textContent = `step 0 / ${toy.total}`;
  renderToy();
}

function trainLoop() {
  if (!running) return;
  const loss = toy.train(10);
  $("t-info").textContent = `step ${toy.step} / ${toy.total}, loss ${loss.toFixed(3)}`;
  if (toy.step % 50 === 0 || toy.step >= toy.total) renderToy();
  if (toy.step >= toy.total) {
    running = false;
    $("t-run").textContent = "Train";
    return;
  }
  requestAnimationFrame(trainLoop);
}

async function main() {
  try {
    await init();
  } catch (e) {
    $("status").textContent = `Could not load the module: ${e}. Build it with wasm-pack first.`;
    return;
  }
  $("status").textContent = "";
  $("rf-depth").addEventListener("input", drawFootprint);
  for (const id of ["f-mu", "f-ps", "f-y", "f-ns"]) $(id).addEventListener("input", drawFusion);
  $("t-reset").addEventListener("click", resetToy);
  $("t-run").addEventListener("click", () => {
    running = !running;
    $("t-run").textContent = running ? "Pause" : "Train";
    if (running) requestAnimationFrame(trainLoop);
  });
  drawFootprint();
  drawFusion();
  resetToy();
}

main();
