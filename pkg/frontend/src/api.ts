import type { Metrics, NextResponse, SessionInfo, SubmitResponse, Verdict } from "./types";

/** Raised for non-2xx responses; carries the parsed error payload so the
 * flow can distinguish an out-of-order rejection (409 with expected id)
 * from a transport failure. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`service responded ${status}`);
  }
}

async function requestJson<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // non-JSON body; fall through with null detail
  }
  if (!response.ok) {
    const detail = (body as { detail?: unknown } | null)?.detail ?? body;
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

export class ReviewApi {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  health(): Promise<{ status: string }> {
    return requestJson(this.url("/healthz"));
  }

  createSession(promptId: number, seed: number, annotator: string): Promise<SessionInfo> {
    return requestJson(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt_id: promptId, seed, annotator }),
    });
  }

  nextItem(sessionId: string): Promise<NextResponse> {
    return requestJson(this.url(`/sessions/${sessionId}/next`));
  }

  submitAnnotation(sessionId: string, verdict: Verdict): Promise<SubmitResponse> {
    return requestJson(this.url(`/sessions/${sessionId}/annotations`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(verdict),
    });
  }

  metrics(sessionId: string): Promise<Metrics & { progress: unknown }> {
    return requestJson(this.url(`/sessions/${sessionId}/metrics`));
  }
}
