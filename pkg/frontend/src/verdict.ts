/** Tri-state verdict form: every boolean starts unset and must be answered
 * before submission is allowed. */

export type TriState = boolean | null;

export const VERDICT_FIELDS = [
  "started_correct",
  "stopped_correct",
  "reason_accurate",
  "hallucination",
] as const;

export type VerdictField = (typeof VERDICT_FIELDS)[number];

export interface VerdictForm {
  started_correct: TriState;
  stopped_correct: TriState;
  reason_accurate: TriState;
  hallucination: TriState;
  comment: string;
}

export function emptyForm(): VerdictForm {
  return {
    started_correct: null,
    stopped_correct: null,
    reason_accurate: null,
    hallucination: null,
    comment: "",
  };
}

export function isComplete(form: VerdictForm): boolean {
  return VERDICT_FIELDS.every((field) => form[field] !== null);
}

export function unsetFields(form: VerdictForm): VerdictField[] {
  return VERDICT_FIELDS.filter((field) => form[field] === null);
}

/** Keyboard cycling: unset -> yes -> no -> yes -> ... */
export function cycleField(form: VerdictForm, field: VerdictField): VerdictForm {
  const current = form[field];
  return { ...form, [field]: current === null ? true : !current };
}

export function setField(form: VerdictForm, field: VerdictField, value: boolean): VerdictForm {
  return { ...form, [field]: value };
}
