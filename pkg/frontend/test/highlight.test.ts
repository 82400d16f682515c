import { describe, expect, it } from "vitest";

import { escapeHtml, extractionTerms, highlightTerms } from "../src/highlight";

describe("note highlighting", () => {
  it("escapes note markup before highlighting", () => {
    const html = highlightTerms("stop <script>alert(1)</script> now", ["stop"]);
    expect(html).toContain("&lt;script&gt;");
    expect(html).toContain("<mark>stop</mark>");
    expect(html).not.toContain("<script>");
  });

  it("marks extracted terms case-insensitively", () => {
    const html = highlightTerms("Start NuvaRing today; nuvaring counseled.",
      ["NuvaRing"]);
    expect(html.match(/<mark>/g)).toHaveLength(2);
  });

  it("treats regex metacharacters in terms literally", () => {
    const html = highlightTerms("dose 150 mg/mL given", ["150 mg/mL"]);
    expect(html).toContain("<mark>150 mg/mL</mark>");
  });

  it("collects terms from normalized and raw extraction fields", () => {
    const terms = extractionTerms({
      started: ["intravaginal"],
      stopped: ["oral"],
      started_raw: "NuvaRing",
      stopped_raw: "the pill and the patch",
    });
    expect(terms).toContain("intravaginal");
    expect(terms).toContain("NuvaRing");
    expect(terms).toContain("the pill");
    expect(terms).toContain("the patch");
    expect(terms).not.toContain("none");
  });

  it("escapeHtml covers the dangerous characters", () => {
    expect(escapeHtml('<a href="x">&</a>'))
      .toBe("&lt;a href=&quot;x&quot;&gt;&amp;&lt;/a&gt;");
  });
});
