import init, { Demo, synthImage, imageSide } from "./pkg/dcnn_web.js";

const $ = (id) => document.getElementById(id);
const SESSION_SEED = 7;
const SESSION_SIZE = 400;

let demo;
let side;
let pixels;
let testIndex = 0;
let losses = [];

function drawGray(canvas, data, w, h, scale = 1) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(w, h);
  let max = 0;
  for (const v of data) max = Math.max(max, v);
  const norm = scale === "auto" ? (max > 0 ? 1 / max : 1) : scale;
  for (let i = 0; i < w * h; i++) {
    const g = Math.max(0, Math.min(255, Math.round(data[i] * norm * 255)));
    img.data.set([g, g, g, 255], 4 * i);
  }
  const tmp = new OffscreenCanvas(w, h);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function showImage(data, caption) {
  pixels = data;
  drawGray($("slice"), data, side, side);
  const p = demo.predict(data);
  $("prediction").textContent = `${caption}: p(cancer) = ${p.toFixed(4)}`;
  showMaps();
}

function showMaps() {
  const [c, h, w] = demo.featureDims();
  const maps = demo.featureMaps(pixels);
  const box = $("maps");
  box.replaceChildren();
  for (let k = 0; k < c; k++) {
    const cv = document.createElement("canvas");
    cv.width = cv.height = 120;
    drawGray(cv, maps.subarray(k * h * w, (k + 1) * h * w), w, h, "auto");
    box.appendChild(cv);
  }
}

function drawLoss() {
  const cv = $("loss");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  if (losses.length < 2) return;
  const max = Math.max(...losses);
  ctx.strokeStyle = "#36c";
  ctx.beginPath();
  losses.forEach((l, i) => {
    const x = (i / (losses.length - 1)) * (cv.width - 4) + 2;
    const y = cv.height - 2 - (l / max) * (cv.height - 4);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
}

const fmt = (v) => (v === null ? "undefined" : v.toFixed(4));

function showMetrics() {
  const t = Number($("threshold").value);
  $("threshold-value").textContent = t.toFixed(2);
  const r = JSON.parse(demo.metrics(t));
  $("metrics").innerHTML =
    "<tr><th>Sensitivity</th><th>Specificity</th><th>F1</th><th>Accuracy</th><th>Log-Loss</th></tr>" +
    `<tr><td>${fmt(r.sensitivity)}</td><td>${fmt(r.specificity)}</td><td>${fmt(r.f1)}</td>` +
    `<td>${fmt(r.accuracy)}</td><td>${fmt(r.weighted_log_loss)}</td></tr>`;
  $("confusion").innerHTML =
    "<tr><th></th><th>pred cancer</th><th>pred free</th></tr>" +
    `<tr><th>cancer</th><td>${r.tp}</td><td>${r.fn}</td></tr>` +
    `<tr><th>free</th><td>${r.fp}</td><td>${r.tn}</td></tr>`;
}

function refresh() {
  $("progress").textContent =
    `${demo.iterations()} steps, validation loss ${demo.validationLoss().toFixed(4)}`;
  drawLoss();
  showMetrics();
  showImage(pixels, "current image");
}

function reset() {
  demo = new Demo(SESSION_SEED, SESSION_SIZE);
  losses = [];
  refresh();
}

function guard(fn) {
  return () => {
    try {
      $("status").textContent = "";
      fn();
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

await init();
side = imageSide();
pixels = synthImage(1, side, true);
demo = new Demo(SESSION_SEED, SESSION_SIZE);
$("status").textContent = "";
refresh();

$("generate").onclick = guard(() =>
  showImage(synthImage(Number($("seed").value), side, $("disk").checked), "synthetic"));
$("from-test").onclick = guard(() => {
  testIndex = (testIndex + 1) % demo.testSize();
  const label = demo.testLabel(testIndex) ? "cancer" : "cancer-free";
  showImage(demo.testImage(testIndex), `test #${testIndex} (${label})`);
});
$("train").onclick = guard(() => {
  losses.push(...demo.train(100, Number($("lr").value)));
  refresh();
});
$("reset").onclick = guard(reset);
$("threshold").oninput = guard(showMetrics);
