import { ReviewApi } from "./api";
import { FlowState, ReviewFlow } from "./flow";
import { extractionTerms, highlightTerms } from "./highlight";
import { bindKeyboard } from "./keyboard";
import { VERDICT_FIELDS, VerdictField } from "./verdict";

const FIELD_LABELS: Record<VerdictField, string> = {
  started_correct: "started correct",
  stopped_correct: "stopped correct",
  reason_accurate: "reason accurate",
  hallucination: "hallucination present",
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function formatRate(value: number | null): string {
  return value === null ? "n/a" : `${(value * 100).toFixed(1)}%`;
}

function formatF1(value: number | null): string {
  return value === null ? "n/a" : value.toFixed(3);
}

function render(state: FlowState): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = state.banner ?? "";
  banner.hidden = !state.banner;
  el<HTMLButtonElement>("retry").hidden = state.phase !== "retry_pending"
    && state.phase !== "error";

  const progress = el<HTMLSpanElement>("progress");
  if (state.progress) {
    progress.textContent =
      `${state.progress.annotated} / ${state.progress.total}`;
  }

  const metrics = el<HTMLDivElement>("metrics");
  if (state.metrics) {
    metrics.textContent =
      `n=${state.metrics.n}` +
      ` · reason accuracy ${formatRate(state.metrics.reason_accuracy)}` +
      ` · hallucination ${formatRate(state.metrics.hallucination_rate)}` +
      ` · F1 started ${formatF1(state.metrics.f1_started)}` +
      ` / stopped ${formatF1(state.metrics.f1_stopped)}`;
  }

  el<HTMLDivElement>("review").hidden =
    state.phase !== "reviewing" && state.phase !== "submitting"
    && state.phase !== "retry_pending";
  el<HTMLDivElement>("completed").hidden = state.phase !== "done";

  if (state.item) {
    const terms = extractionTerms(state.item.extraction);
    el<HTMLPreElement>("note").innerHTML =
      highlightTerms(state.item.note_text, terms);
    el<HTMLSpanElement>("ex-started").textContent =
      state.item.extraction.started.join(", ") || "none";
    el<HTMLSpanElement>("ex-stopped").textContent =
      state.item.extraction.stopped.join(", ") || "none";
    el<HTMLSpanElement>("ex-reason").textContent =
      state.item.extraction.reason || "(empty)";
  }

  for (const field of VERDICT_FIELDS) {
    const val = state.form[field];
    const yes = el<HTMLButtonElement>(`${field}-yes`);
    const no = el<HTMLButtonElement>(`${field}-no`);
    yes.classList.toggle("selected", val === true);
    no.classList.toggle("selected", val === false);
    const row = el<HTMLDivElement>(`row-${field}`);
    row.classList.toggle("unanswered", val === null);
  }
  const comment = el<HTMLTextAreaElement>("comment");
  if (comment.value !== state.form.comment) {
    comment.value = state.form.comment;
  }

  const flow = currentFlow as ReviewFlow;
  el<HTMLButtonElement>("submit").disabled = !flow.canSubmit();
}

let currentFlow: ReviewFlow | null = null;

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const apiBase = params.get("api") ?? "http://127.0.0.1:8787";
  const promptId = Number(params.get("prompt") ?? "1");
  const seed = Number(params.get("seed") ?? "0");
  const annotator = params.get("annotator") ?? "anonymous";

  const flow = new ReviewFlow(new ReviewApi(apiBase));
  currentFlow = flow;
  flow.onChange(render);

  for (const field of VERDICT_FIELDS) {
    el<HTMLButtonElement>(`${field}-yes`).onclick = () =>
      flow.setField(field, true);
    el<HTMLButtonElement>(`${field}-no`).onclick = () =>
      flow.setField(field, false);
    el<HTMLSpanElement>(`label-${field}`).textContent = FIELD_LABELS[field];
  }
  const comment = el<HTMLTextAreaElement>("comment");
  comment.oninput = () => flow.setComment(comment.value);
  el<HTMLButtonElement>("submit").onclick = () => void flow.submit();
  el<HTMLButtonElement>("retry").onclick = () => {
    if (flow.state.phase === "retry_pending") {
      void flow.retryPending();
    } else {
      void flow.start(promptId, seed, annotator);
    }
  };
  window.addEventListener("keydown", bindKeyboard(flow, comment));

  void flow.start(promptId, seed, annotator);
}

boot();
