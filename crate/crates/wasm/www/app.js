import init, { sampleNegatives, lossTable, trainDemo } from "./pkg/avex_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(el, e) {
  el.innerHTML = `<p class="err">${e.message ?? e}</p>`;
}

function runSampler() {
  const out = $("s-out");
  try {
    const gold = Uint32Array.from(
      $("s-gold").value.split(",").map((s) => s.trim()).filter((s) => s !== "").map(Number)
    );
    const r = JSON.parse(
      sampleNegatives(num("s-attrs"), num("s-vals"), gold, num("s-draws"), BigInt(num("s-seed")))
    );
    const max = Math.max(1, ...r.labels.map((l) => l.count));
    const rows = r.labels
      .map((l) => {
        const w = Math.round((240 * l.count) / max);
        const cls = l.gold ? ' class="gold"' : "";
        return `<tr${cls}><td>${l.label_id}</td><td>${l.attr_id}</td><td>${l.gold ? "gold" : ""}</td>` +
          `<td>${l.count}</td><td style="text-align:left"><span class="bar" style="width:${w}px"></span></td></tr>`;
      })
      .join("");
    const per = Object.entries(r.per_attribute_counts).map(([a, k]) => `attr ${a}: ${k}`).join(", ");
    out.innerHTML =
      `<p>first draw: [${r.first_draw.join(", ")}]; negatives per attribute: ${per || "none"}</p>` +
      `<table><tr><th>label</th><th>attr</th><th></th><th>count</th><th></th></tr>${rows}</table>`;
  } catch (e) {
    fail(out, e);
  }
}

function runLoss() {
  const out = $("l-out");
  $("l-fv").textContent = $("l-f").value;
  try {
    const rows = JSON.parse(lossTable(num("l-bce"), num("l-sm"), num("l-ns"), num("l-pr"), num("l-f")));
    out.innerHTML =
      "<table><tr><th>variant</th><th>F used</th><th>w_sm</th><th>w_ns</th><th>w_pr</th><th>total</th></tr>" +
      rows
        .map((r) => `<tr><td>${r.model}</td><td>${r.f_effective.toFixed(2)}</td><td>${r.w_sm.toFixed(2)}</td>` +
          `<td>${r.w_ns.toFixed(2)}</td><td>${r.w_pr.toFixed(2)}</td><td>${r.total.toFixed(4)}</td></tr>`)
        .join("") +
      "</table>";
  } catch (e) {
    fail(out, e);
  }
}

function plot(log) {
  const c = $("t-plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const pad = 30;
  const w = c.width - 2 * pad;
  const h = c.height - 2 * pad;
  const n = Math.max(1, log.length - 1);
  const x = (i) => pad + (w * i) / n;
  const series = [
    { key: (e) => e.l_bce, color: "#d0503a", label: "L_bce" },
    { key: (e) => (e.val ? e.val.micro_f1 / 100 : 0), color: "#3a8d4f", label: "val MiF1 / 100" },
  ];
  const ymax = Math.max(1, ...log.map((e) => e.l_bce));
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, w, h);
  series.forEach((s, k) => {
    g.strokeStyle = s.color;
    g.beginPath();
    log.forEach((e, i) => {
      const y = pad + h - (h * s.key(e)) / ymax;
      i === 0 ? g.moveTo(x(i), y) : g.lineTo(x(i), y);
    });
    g.stroke();
    g.fillStyle = s.color;
    g.fillText(s.label, pad + 8, pad + 14 + 14 * k);
  });
}

function runTrain() {
  const out = $("t-out");
  out.textContent = "training...";
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const r = JSON.parse(
        trainDemo(BigInt(num("t-seed")), $("t-variant").value, $("t-pool").value, num("t-epochs"), num("t-f"))
      );
      const ms = Math.round(performance.now() - t0);
      const m = r.test;
      out.innerHTML =
        `<p>${r.variant}/${r.pooling}: best epoch ${r.best_epoch}, ${ms} ms. Test ` +
        `P ${m.precision.toFixed(2)} R ${m.recall.toFixed(2)} MiF1 ${m.micro_f1.toFixed(2)} MaF1 ${m.macro_f1.toFixed(2)}</p>`;
      plot(r.log);
    } catch (e) {
      fail(out, e);
    }
  }, 10);
}

await init();
$("s-run").addEventListener("click", runSampler);
["l-bce", "l-sm", "l-ns", "l-pr", "l-f"].forEach((id) => $(id).addEventListener("input", runLoss));
$("t-run").addEventListener("click", runTrain);
runSampler();
runLoss();
