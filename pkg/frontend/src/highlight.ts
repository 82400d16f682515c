/** Plain-text note rendering with <mark> highlighting of the extracted
 * terms, so the reviewer can verify claims quickly. Everything is escaped
 * first; highlighting never introduces markup from note content. */

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function escapeRegExp(term: string): string {
  return term.replace(/[.*+?^${}()|[\]\\]/g, "\\$&");
}

export function highlightTerms(noteText: string, terms: string[]): string {
  let html = escapeHtml(noteText);
  const cleaned = terms
    .map((t) => t.trim())
    .filter((t) => t.length >= 2)
    .sort((a, b) => b.length - a.length); // longest first: no nested marks
  for (const term of cleaned) {
    const pattern = new RegExp(escapeRegExp(escapeHtml(term)), "gi");
    html = html.replace(pattern, (match) => `<mark>${match}</mark>`);
  }
  return html;
}

/** Terms worth highlighting for an extraction: raw answers plus normalized
 * modality names. */
export function extractionTerms(extraction: {
  started: string[];
  stopped: string[];
  started_raw?: string;
  stopped_raw?: string;
}): string[] {
  const raw = [extraction.started_raw ?? "", extraction.stopped_raw ?? ""]
    .flatMap((field) => field.split(/,| and /i))
    .map((t) => t.trim())
    .filter((t) => t && t.toLowerCase() !== "none");
  return [...new Set([...extraction.started, ...extraction.stopped, ...raw])];
}
