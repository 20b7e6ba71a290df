import init, { exactCurve, toyTest, wordKernel } from "./pkg/acmmd_wasm_demo.js";

const num = (id) => Number(document.getElementById(id).value);
const text = (id) => document.getElementById(id).value;

function show(id, fn) {
  const out = document.getElementById(id);
  try {
    const value = JSON.parse(fn());
    out.textContent = JSON.stringify(value, null, 2);
    return value;
  } catch (err) {
    out.textContent = `error: ${err.message ?? err}`;
    return null;
  }
}

function plot(points) {
  const canvas = document.getElementById("curve-plot");
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, width, height);
  const xMax = points[points.length - 1].delta_p || 1;
  const yMax = Math.max(...points.map((p) => Math.max(p.acmmd_sq, p.acmmd_rel_sq))) || 1;
  const x = (v) => pad + (v / xMax) * (width - 2 * pad);
  const y = (v) => height - pad - (v / yMax) * (height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);
  for (const [key, colour] of [["acmmd_sq", "#c0392b"], ["acmmd_rel_sq", "#2471a3"]]) {
    ctx.strokeStyle = colour;
    ctx.beginPath();
    points.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, x(p.delta_p), y(p[key])));
    ctx.stroke();
    ctx.fillStyle = colour;
    ctx.fillText(key, width - pad - 80, key === "acmmd_sq" ? pad + 14 : pad + 28);
  }
  ctx.fillStyle = "#000";
  ctx.fillText(`Δp = ${xMax}`, width - pad - 50, height - 10);
  ctx.fillText(yMax.toExponential(2), 2, pad - 6);
}

await init();

document.getElementById("curve-run").onclick = () => {
  const pts = show("curve-out", () =>
    exactCurve(num("curve-lambda"), num("curve-sigma"), num("curve-max"), 30));
  if (pts) plot(pts);
};
document.getElementById("test-run").onclick = () =>
  show("test-out", () =>
    toyTest(num("test-n"), num("test-dp"), num("test-b"), num("test-alpha"), num("test-seed")));
document.getElementById("word-run").onclick = () =>
  show("word-out", () => wordKernel(text("word-a"), text("word-b"), num("word-lambda")));

document.getElementById("curve-run").click();
