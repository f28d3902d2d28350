import { ConsoleApi } from "./api.js";
import { ConsoleController } from "./console.js";
import { render, viewTransform } from "./render.js";
import type { ViewState } from "./state.js";

/** DOM bootstrap; everything testable lives behind the controller. */

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("plot");
const ctx = canvas.getContext("2d");
if (!ctx) throw new Error("2d canvas unsupported");

const CSS_WIDTH = canvas.width;
const CSS_HEIGHT = canvas.height;
const dpr = window.devicePixelRatio || 1;
canvas.style.width = `${CSS_WIDTH}px`;
canvas.style.height = `${CSS_HEIGHT}px`;
canvas.width = CSS_WIDTH * dpr;
canvas.height = CSS_HEIGHT * dpr;
ctx.scale(dpr, dpr);

const statusEl = el<HTMLSpanElement>("status");
const bannerEl = el<HTMLDivElement>("banner");
const messageEl = el<HTMLDivElement>("message");
const orderEl = el<HTMLOListElement>("rank-order");
const toolPan = el<HTMLButtonElement>("tool-pan");
const toolBox = el<HTMLButtonElement>("tool-box");
const applyFeedbackBtn = el<HTMLButtonElement>("apply-feedback");
const startRankingBtn = el<HTMLButtonElement>("start-ranking");
const applyRankingBtn = el<HTMLButtonElement>("apply-ranking");
const rankInput = el<HTMLInputElement>("rank-input");

function present(state: ViewState): void {
  render(ctx!, CSS_WIDTH, CSS_HEIGHT, state);

  const run = state.run;
  statusEl.textContent = run
    ? `${run.cell} · ${run.approach} · cycle ${run.cycle ?? "-"} · ${run.status}` +
      (run.error ? ` · ${run.error}` : "")
    : "no run yet";

  const pending = state.pending;
  if (pending) {
    bannerEl.textContent =
      `operator feedback requested · request #${pending.request_id} · ` +
      `${pending.new_class_ids.length} new class(es)`;
    bannerEl.classList.add("show");
  } else {
    bannerEl.classList.remove("show");
  }

  messageEl.textContent = state.message ?? "";
  toolPan.classList.toggle("active", state.tool === "pan");
  toolBox.classList.toggle("active", state.tool === "box");
  applyFeedbackBtn.disabled = !pending || state.busy;
  startRankingBtn.disabled = !pending || state.busy;
  applyRankingBtn.disabled = !state.ranking || state.ranking.current === null || state.busy;

  orderEl.replaceChildren();
  if (state.ranking) {
    rankInput.max = String(state.ranking.classIds.length);
    for (const id of state.ranking.classIds) {
      const li = document.createElement("li");
      const rank = state.ranking.assigned.get(id);
      li.textContent =
        rank !== undefined
          ? `class ${id} - rank ${rank}`
          : id === state.ranking.current
            ? `class ${id} - assign a rank`
            : `class ${id} - waiting`;
      li.classList.toggle("current", id === state.ranking.current);
      orderEl.append(li);
    }
  }
}

const api = new ConsoleApi(
  (url, init) => fetch(url, init),
  (url) => new EventSource(url),
);
const controller: ConsoleController = new ConsoleController(api, present, () =>
  viewTransform(controller.state, CSS_WIDTH, CSS_HEIGHT),
);

canvas.addEventListener("pointerdown", (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  controller.pointerDown(ev.offsetX, ev.offsetY);
});
canvas.addEventListener("pointermove", (ev) => controller.pointerMove(ev.offsetX, ev.offsetY));
canvas.addEventListener("pointerup", () => controller.pointerUp());

toolPan.addEventListener("click", () => controller.setTool("pan"));
toolBox.addEventListener("click", () => controller.setTool("box"));
applyFeedbackBtn.addEventListener("click", () => void controller.applyFeedback());
startRankingBtn.addEventListener("click", () => controller.startRanking());
applyRankingBtn.addEventListener("click", () => {
  const rank = Number(rankInput.value);
  void controller.applyRanking(rank);
  rankInput.value = "";
});

void controller.start();
