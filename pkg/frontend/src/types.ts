/** Wire types for the review-service HTTP+JSON API (consumed verbatim). */

export interface Progress {
  annotated: number;
  total: number;
  complete: boolean;
}

export interface SessionInfo {
  session_id: string;
  annotated: number;
  total: number;
  complete: boolean;
  prompt_id: number;
  annotator: string;
}

export interface Extraction {
  note_id: string;
  started: string[];
  stopped: string[];
  reason: string;
  started_raw?: string;
  stopped_raw?: string;
  raw_response?: string;
}

export interface ReviewItem {
  done: false;
  note_id: string;
  note_text: string;
  extraction: Extraction;
  progress: Progress;
}

export interface DoneResponse {
  done: true;
  progress: Progress;
  metrics: Metrics;
}

export type NextResponse = ReviewItem | DoneResponse;

export interface Metrics {
  n: number;
  reason_accuracy: number | null;
  hallucination_rate: number | null;
  f1_started: number | null;
  f1_stopped: number | null;
}

export interface Verdict {
  note_id: string;
  prompt_id: number;
  started_correct: boolean;
  stopped_correct: boolean;
  reason_accurate: boolean;
  hallucination: boolean;
  comment: string;
}

export interface SubmitResponse {
  ok: boolean;
  duplicate: boolean;
  progress: Progress;
}
