import { ApiClient, ApiError } from "./api.js";
import { buildDrawList, renderDrawList } from "./draw.js";
import { UiSession } from "./session.js";
import type {
  CandidatePolylineDto,
  PredictResponse,
  ScenarioDetail,
} from "./types.js";
import { fitViewport, sceneBounds, type Viewport } from "./view.js";

const api = new ApiClient();

interface AppState {
  detail: ScenarioDetail | null;
  session: UiSession | null;
  candidates: CandidatePolylineDto[];
  chosenCandidate: number | null;
  prediction: PredictResponse | null;
  viewport: Viewport | null;
  injectCounter: number;
}

const state: AppState = {
  detail: null,
  session: null,
  candidates: [],
  chosenCandidate: null,
  prediction: null,
  viewport: null,
  injectCounter: 0,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const node = el<HTMLDivElement>("status");
  node.textContent = text;
  node.className = isError ? "status error" : "status";
}

function redraw(): void {
  if (!state.detail || !state.viewport) return;
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const highlighted =
    state.chosenCandidate !== null
      ? new Set(state.candidates[state.chosenCandidate].lane_ids)
      : undefined;
  const cmds = buildDrawList(
    {
      scenario: state.detail.scenario,
      map: state.detail.map,
      prediction: state.prediction,
      candidates: state.candidates,
      highlightedLanes: highlighted,
    },
    state.viewport,
  );
  renderDrawList(ctx, cmds);
}

function renderDeltas(): void {
  const node = el<HTMLDivElement>("deltas");
  if (!state.prediction) {
    node.textContent = "";
    return;
  }
  const d = state.prediction.deltas.top_ranked;
  node.textContent =
    `top-ranked endpoint moved ${d.endpoint_displacement.toFixed(2)} m; ` +
    `terminal speed ${d.terminal_speed_baseline.toFixed(2)} -> ` +
    `${d.terminal_speed_edited.toFixed(2)} m/s`;
}

function renderEditList(): void {
  const node = el<HTMLUListElement>("edits");
  node.textContent = "";
  if (!state.session) return;
  for (const e of state.session.editList) {
    const li = document.createElement("li");
    li.textContent = JSON.stringify(e);
    node.appendChild(li);
  }
  if (state.session.override) {
    const li = document.createElement("li");
    li.textContent = `polyline override (${state.session.override.length} pts)`;
    node.appendChild(li);
  }
}

async function refreshPrediction(): Promise<void> {
  if (!state.session) return;
  setStatus("predicting...");
  try {
    const res = await api.predict(state.session.toPredictRequest());
    if (res === null) return; // a newer request superseded this one
    state.prediction = res;
    setStatus("ok");
    renderDeltas();
    redraw();
  } catch (err) {
    if (err instanceof ApiError) {
      setStatus(`${err.kind}: ${err.message}`, true);
    } else {
      setStatus(String(err), true);
    }
  }
}

async function loadScenario(id: string): Promise<void> {
  setStatus("loading scenario...");
  state.detail = await api.getScenario(id);
  state.session = new UiSession(state.detail.scenario);
  state.candidates = await api.getPolylines(id, 6);
  state.chosenCandidate = null;
  state.prediction = null;
  state.injectCounter = 0;
  const canvas = el<HTMLCanvasElement>("scene");
  const bounds = sceneBounds(state.detail.scenario, state.detail.map);
  state.viewport = bounds ? fitViewport(bounds, canvas.width, canvas.height) : null;

  const pick = el<HTMLSelectElement>("candidate");
  pick.textContent = "";
  const none = document.createElement("option");
  none.value = "";
  none.textContent = "model's own choice";
  pick.appendChild(none);
  state.candidates.forEach((c, i) => {
    const opt = document.createElement("option");
    opt.value = String(i);
    opt.textContent = `#${i + 1} ${c.lane_ids.join(" > ")} (align ${c.alignment_score.toFixed(2)})`;
    pick.appendChild(opt);
  });

  const actorPick = el<HTMLSelectElement>("actor");
  actorPick.textContent = "";
  for (const aid of Object.keys(state.detail.scenario.actors)) {
    if (aid === state.detail.scenario.focal_id) continue;
    const opt = document.createElement("option");
    opt.value = aid;
    opt.textContent = aid;
    actorPick.appendChild(opt);
  }

  renderEditList();
  redraw();
  await refreshPrediction();
}

async function boot(): Promise<void> {
  const scenarios = await api.listScenarios();
  const pick = el<HTMLSelectElement>("scenario");
  for (const s of scenarios) {
    const opt = document.createElement("option");
    opt.value = s.id;
    opt.textContent = `${s.id} (${s.map_id}, ${s.n_actors} actors)`;
    pick.appendChild(opt);
  }
  pick.addEventListener("change", () => void loadScenario(pick.value));

  el<HTMLButtonElement>("place-stopped").addEventListener("click", () => {
    if (!state.session) return;
    state.injectCounter += 1;
    const dist = Number(el<HTMLInputElement>("ahead-m").value) || 10;
    state.session.placeStoppedVehicleAhead(`injected_${state.injectCounter}`, dist);
    renderEditList();
    void refreshPrediction();
  });

  el<HTMLButtonElement>("remove-actor").addEventListener("click", () => {
    const aid = el<HTMLSelectElement>("actor").value;
    if (!state.session || !aid) return;
    state.session.removeActor(aid);
    renderEditList();
    void refreshPrediction();
  });

  el<HTMLInputElement>("halt-at").addEventListener("change", () => {
    const aid = el<HTMLSelectElement>("actor").value;
    if (!state.session || !aid) return;
    state.session.haltActor(aid, Number(el<HTMLInputElement>("halt-at").value));
    renderEditList();
    void refreshPrediction();
  });

  el<HTMLSelectElement>("candidate").addEventListener("change", () => {
    if (!state.session) return;
    const raw = el<HTMLSelectElement>("candidate").value;
    if (raw === "") {
      state.chosenCandidate = null;
      state.session.clearPolyline();
    } else {
      state.chosenCandidate = Number(raw);
      state.session.pickPolyline(state.candidates[state.chosenCandidate].points);
    }
    renderEditList();
    void refreshPrediction();
  });

  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    if (!state.session) return;
    state.session.undo();
    renderEditList();
    void refreshPrediction();
  });

  el<HTMLButtonElement>("reset").addEventListener("click", () => {
    if (!state.session) return;
    state.session.reset();
    state.chosenCandidate = null;
    el<HTMLSelectElement>("candidate").value = "";
    renderEditList();
    void refreshPrediction();
  });

  if (scenarios.length > 0) {
    pick.value = scenarios[0].id;
    await loadScenario(scenarios[0].id);
  } else {
    setStatus("no scenarios available", true);
  }
}

boot().catch((err) => setStatus(String(err), true));
