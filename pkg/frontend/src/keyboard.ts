/** Keyboard-first controls: a session is completable without the mouse.
 *
 *   1..4   cycle started-correct / stopped-correct / reason-accurate /
 *          hallucination (unset -> yes -> no -> yes ...)
 *   Enter  submit (when every field is answered)
 *   r      retry a verdict held after a network failure
 *   c      focus the comment box (Escape returns focus)
 */

import { ReviewFlow } from "./flow";
import { VERDICT_FIELDS } from "./verdict";

export function bindKeyboard(
  flow: ReviewFlow,
  commentBox: HTMLTextAreaElement | null,
): (event: KeyboardEvent) => void {
  return (event: KeyboardEvent) => {
    if (event.target instanceof HTMLTextAreaElement
        || event.target instanceof HTMLInputElement) {
      if (event.key === "Escape") {
        (event.target as HTMLElement).blur();
      }
      return; // typing a comment
    }
    const index = ["1", "2", "3", "4"].indexOf(event.key);
    if (index >= 0) {
      event.preventDefault();
      flow.cycleField(VERDICT_FIELDS[index]);
      return;
    }
    if (event.key === "Enter") {
      event.preventDefault();
      void flow.submit();
      return;
    }
    if (event.key === "r") {
      event.preventDefault();
      void flow.retryPending();
      return;
    }
    if (event.key === "c" && commentBox) {
      event.preventDefault();
      commentBox.focus();
    }
  };
}
