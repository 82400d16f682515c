import { ApiError, ReviewApi } from "./api";
import type { Metrics, Progress, ReviewItem, Verdict } from "./types";
import {
  VerdictField,
  VerdictForm,
  cycleField,
  emptyForm,
  isComplete,
  setField,
} from "./verdict";

export type Phase =
  | "idle"
  | "connecting"
  | "reviewing"
  | "submitting"
  | "retry_pending"
  | "done"
  | "error";

export interface FlowState {
  phase: Phase;
  sessionId: string | null;
  promptId: number;
  item: ReviewItem | null;
  form: VerdictForm;
  progress: Progress | null;
  /** always the service's own numbers, never recomputed client-side */
  metrics: Metrics | null;
  pendingVerdict: Verdict | null;
  banner: string | null;
}

type Listener = (state: FlowState) => void;

function isNetworkFailure(error: unknown): boolean {
  if (error instanceof ApiError) {
    return error.status >= 500;
  }
  return true; // fetch rejection: connection refused, timeout, ...
}

/** Session flow: fetch next -> render -> capture verdict -> submit ->
 * advance. One submission in flight at a time; progress updates
 * optimistically and rolls back on rejection; a verdict that failed on a
 * network error is retained and retried against the idempotent service. */
export class ReviewFlow {
  state: FlowState;
  private listeners: Listener[] = [];

  constructor(private api: ReviewApi) {
    this.state = {
      phase: "idle",
      sessionId: null,
      promptId: 0,
      item: null,
      form: emptyForm(),
      progress: null,
      metrics: null,
      pendingVerdict: null,
      banner: null,
    };
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private update(patch: Partial<FlowState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  async start(promptId: number, seed: number, annotator: string): Promise<void> {
    this.update({ phase: "connecting", promptId, banner: null });
    let session;
    try {
      session = await this.api.createSession(promptId, seed, annotator);
    } catch (error) {
      this.update({
        phase: "error",
        banner: bannerFor(error, "cannot reach the review service"),
      });
      return;
    }
    this.update({ sessionId: session.session_id });
    await this.loadNext();
  }

  async loadNext(): Promise<void> {
    if (!this.state.sessionId) return;
    let next;
    try {
      next = await this.api.nextItem(this.state.sessionId);
    } catch (error) {
      this.update({
        phase: "error",
        banner: bannerFor(error, "failed to fetch the next item"),
      });
      return;
    }
    if (next.done) {
      this.update({
        phase: "done",
        item: null,
        progress: next.progress,
        metrics: next.metrics,
      });
      return;
    }
    this.update({
      phase: "reviewing",
      item: next,
      progress: next.progress,
      form: emptyForm(), // form resets on item advance
    });
  }

  setField(field: VerdictField, value: boolean): void {
    if (this.state.phase !== "reviewing" && this.state.phase !== "retry_pending") return;
    this.update({ form: setField(this.state.form, field, value) });
  }

  cycleField(field: VerdictField): void {
    if (this.state.phase !== "reviewing") return;
    this.update({ form: cycleField(this.state.form, field) });
  }

  setComment(comment: string): void {
    this.update({ form: { ...this.state.form, comment } });
  }

  canSubmit(): boolean {
    return this.state.phase === "reviewing" && isComplete(this.state.form);
  }

  async submit(): Promise<void> {
    if (!this.canSubmit() || !this.state.item) return;
    const form = this.state.form;
    const verdict: Verdict = {
      note_id: this.state.item.note_id,
      prompt_id: this.state.promptId,
      started_correct: form.started_correct as boolean,
      stopped_correct: form.stopped_correct as boolean,
      reason_accurate: form.reason_accurate as boolean,
      hallucination: form.hallucination as boolean,
      comment: form.comment,
    };
    await this.send(verdict);
  }

  /** Re-send a verdict that previously failed on a network error. The
   * service deduplicates by verdict hash, so a retry after a half-delivered
   * submit cannot double-count. */
  async retryPending(): Promise<void> {
    const pending = this.state.pendingVerdict;
    if (this.state.phase !== "retry_pending" || !pending) return;
    await this.send(pending);
  }

  private async send(verdict: Verdict): Promise<void> {
    const before = this.state.progress;
    // optimistic: show the item as annotated while the request runs
    this.update({
      phase: "submitting",
      progress: before
        ? { ...before, annotated: before.annotated + 1 }
        : before,
    });
    try {
      await this.api.submitAnnotation(this.state.sessionId as string, verdict);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // mismatch rejection: roll back and reload the current item
        this.update({ progress: before, banner: "submission out of sync; reloaded the current item", pendingVerdict: null });
        await this.loadNext();
        return;
      }
      if (isNetworkFailure(error)) {
        this.update({
          phase: "retry_pending",
          progress: before,
          pendingVerdict: verdict,
          banner: "network failure; verdict kept locally, retry when the service is back",
        });
        return;
      }
      this.update({ phase: "error", progress: before, banner: bannerFor(error, "submission rejected") });
      return;
    }
    // authoritative numbers come from the service
    try {
      const metrics = await this.api.metrics(this.state.sessionId as string);
      this.update({ metrics, pendingVerdict: null, banner: null });
    } catch {
      this.update({ pendingVerdict: null, banner: null });
    }
    await this.loadNext();
  }
}

function bannerFor(error: unknown, fallback: string): string {
  if (error instanceof ApiError) {
    return `${fallback} (status ${error.status})`;
  }
  return `${fallback} (${String(error)})`;
}
