import init, { textSimilarity, Corpus } from "./pkg/simhitl_wasm.js";

const DIM = 256;
const $ = (id) => document.getElementById(id);

let corpus = null;
// "a|b" -> "Similar" | "NotSimilar"
const labels = new Map();

function show(el, text, isError = false) {
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function compare() {
  try {
    const s = textSimilarity($("text-a").value, $("text-b").value, DIM);
    show($("compare-out"), `cosine = ${s.toFixed(6)}`);
  } catch (e) {
    show($("compare-out"), e.message, true);
  }
}

function generate() {
  try {
    corpus?.free();
    corpus = new Corpus(+$("seed").value, +$("n").value, +$("clusters").value, DIM);
  } catch (e) {
    corpus = null;
    show($("corpus-out"), e.message, true);
    return;
  }
  labels.clear();
  const customers = JSON.parse(corpus.customers());
  const select = $("point");
  select.replaceChildren(...customers.map((c) => new Option(`${c.id} (cluster ${c.cluster})`, c.id)));
  show($("corpus-out"), `${customers.length} customers embedded`);
  $("tau-out").textContent = "unset";
  renderNeighbors();
}

function renderNeighbors() {
  if (!corpus) return;
  const id = $("point").value;
  let result;
  try {
    result = JSON.parse(corpus.neighbors(id, +$("k").value));
  } catch (e) {
    show($("neighbors"), e.message, true);
    return;
  }
  const head = document.createElement("p");
  head.textContent = `${id} tags: ${result.query.tags.join(", ")}; same-cluster share ${result.precision.toFixed(2)}`;
  const table = document.createElement("table");
  table.innerHTML = "<tr><th>rank</th><th>id</th><th>score</th><th>cluster</th><th>label</th><th>your label</th></tr>";
  for (const n of result.neighbors) {
    const row = table.insertRow();
    const key = `${id}|${n.id}`;
    row.insertCell().textContent = n.rank;
    row.insertCell().textContent = n.id;
    const score = row.insertCell();
    score.className = "num";
    score.textContent = n.score.toFixed(6);
    const cluster = row.insertCell();
    cluster.textContent = n.same_cluster ? "same" : "other";
    cluster.className = n.same_cluster ? "same" : "other";
    row.insertCell().textContent = n.label ?? "-";
    const pick = document.createElement("select");
    for (const v of ["", "Similar", "NotSimilar"]) pick.add(new Option(v || "-", v));
    pick.value = labels.get(key) ?? "";
    pick.onchange = () => (pick.value ? labels.set(key, pick.value) : labels.delete(key));
    row.insertCell().append(pick);
  }
  $("neighbors").replaceChildren(head, table);
}

function setTau() {
  if (!corpus) return;
  const tau = +$("tau").value;
  corpus.setThreshold(tau);
  $("tau-out").textContent = tau.toFixed(2);
  renderNeighbors();
}

function calibrate() {
  if (!corpus) return;
  const pairs = [...labels].map(([key, label]) => {
    const [a, b] = key.split("|");
    return { a, b, label };
  });
  try {
    const t = JSON.parse(corpus.calibrate(JSON.stringify(pairs)));
    const s = t.stats;
    show($("calibrate-out"),
      `tau = ${t.tau.toFixed(6)}, J = ${s.j.toFixed(3)} (${s.true_positives}/${s.positives} similar kept, ` +
      `${s.false_positives}/${s.negatives} dissimilar kept)`);
    $("tau").value = t.tau;
    $("tau-out").textContent = `${t.tau.toFixed(4)} (calibrated)`;
    renderNeighbors();
  } catch (e) {
    show($("calibrate-out"), e.message, true);
  }
}

await init();
$("compare").onclick = compare;
$("generate").onclick = generate;
$("point").onchange = renderNeighbors;
$("k").onchange = renderNeighbors;
$("tau").oninput = setTau;
$("calibrate").onclick = calibrate;
$("clear").onclick = () => { labels.clear(); renderNeighbors(); };
compare();
generate();
