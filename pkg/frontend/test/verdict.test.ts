import { describe, expect, it } from "vitest";

import {
  VERDICT_FIELDS,
  cycleField,
  emptyForm,
  isComplete,
  setField,
  unsetFields,
} from "../src/verdict";

describe("verdict form", () => {
  it("starts with every boolean unset", () => {
    const form = emptyForm();
    expect(isComplete(form)).toBe(false);
    expect(unsetFields(form)).toEqual([...VERDICT_FIELDS]);
  });

  it("is complete only when all four are answered", () => {
    let form = emptyForm();
    for (const field of VERDICT_FIELDS.slice(0, 3)) {
      form = setField(form, field, false);
    }
    expect(isComplete(form)).toBe(false);
    expect(unsetFields(form)).toEqual(["hallucination"]);
    form = setField(form, "hallucination", true);
    expect(isComplete(form)).toBe(true);
  });

  it("cycles unset -> yes -> no -> yes", () => {
    let form = emptyForm();
    form = cycleField(form, "started_correct");
    expect(form.started_correct).toBe(true);
    form = cycleField(form, "started_correct");
    expect(form.started_correct).toBe(false);
    form = cycleField(form, "started_correct");
    expect(form.started_correct).toBe(true);
  });

  it("does not mutate the previous form", () => {
    const before = emptyForm();
    const after = setField(before, "hallucination", true);
    expect(before.hallucination).toBeNull();
    expect(after.hallucination).toBe(true);
  });
});
