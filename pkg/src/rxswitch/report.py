"""Static report rendering: delimited tables in, deterministic SVGs out.

Externally reported values (from the published study of this method) appear
only as annotation lines labeled "published-reference" and are never mixed
into computed results. Charts render byte-identically for identical inputs:
no timestamps, fixed float formatting.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

#: artifacts the report stage consumes (relative to the output dir)
REPORT_SOURCES = (
    "prompts_eval/prompt_scores.tsv",
    "baselines/learning_curve.tsv",
    "topics/topic_keywords.tsv",
    "enrich/enrichment.json",
)

#: values reported by the published study; display-only, never test targets
PUBLISHED_REFERENCE = {
    "llm_f1_started": 0.828,
    "llm_f1_stopped": 0.439,
    "rf_tfidf_started": 0.714,
    "rf_tfidf_stopped": 0.424,
    "prompt_f1_started_range": (0.817, 0.849),
    "prompt_f1_stopped_range": (0.827, 0.881),
}


class ReportError(Exception):
    pass


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}" '
            'font-family="monospace" font-size="12">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _text(x: float, y: float, s: str, anchor="start", size=12, fill="#222") -> str:
    s = (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
    return (f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" '
            f'font-size="{size}" fill="{fill}">{s}</text>')


def _rect(x, y, w, h, fill, stroke="none") -> str:
    return (f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" height="{h:.1f}" '
            f'fill="{fill}" stroke="{stroke}"/>')


def _line(x1, y1, x2, y2, stroke="#888", dash: str | None = None) -> str:
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
            f'stroke="{stroke}"{extra}/>')


def _placeholder(path: Path, missing: str) -> Path:
    body = [_text(20, 40, f"artifact not available: {missing}"),
            _text(20, 60, "run the producing stage, then re-run report")]
    path.write_text(_svg(640, 100, body))
    return path


def _read_tsv(path: Path) -> list[dict[str, str]]:
    lines = path.read_text().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]


# ---------------------------------------------------------------------------
# charts


def render_prompt_scores(src: Path, dst: Path) -> Path:
    rows = _read_tsv(src)
    w, h = 720, 360
    left, bottom, top = 60, 300, 40
    plot_h = bottom - top
    body = [_text(20, 24, "prompt evaluation: micro-F1 by prompt (dev split)")]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = bottom - frac * plot_h
        body.append(_line(left, y, w - 20, y, stroke="#ddd"))
        body.append(_text(left - 8, y + 4, f"{frac:.2f}", anchor="end", size=10))
    group_w = (w - left - 40) / max(1, len(rows))
    for i, row in enumerate(rows):
        x0 = left + i * group_w + 8
        bar_w = (group_w - 24) / 2
        for k, (field, color) in enumerate((("f1_started", "#4878a8"),
                                            ("f1_stopped", "#c06048"))):
            v = float(row[field])
            bh = v * plot_h
            body.append(_rect(x0 + k * (bar_w + 4), bottom - bh, bar_w, bh, color))
        body.append(_text(x0 + bar_w, bottom + 16, f"p{row['prompt_id']}",
                          anchor="middle"))
        body.append(_text(x0 + bar_w, bottom + 30,
                          row["output_format"][:9], anchor="middle", size=9))
    lo_s, hi_s = PUBLISHED_REFERENCE["prompt_f1_started_range"]
    lo_t, hi_t = PUBLISHED_REFERENCE["prompt_f1_stopped_range"]
    body.append(_text(left, bottom + 48,
                      f"published-reference: started {lo_s:.3f}-{hi_s:.3f}, "
                      f"stopped {lo_t:.3f}-{hi_t:.3f} (not computed here)",
                      size=10, fill="#666"))
    body.append(_rect(w - 200, 30, 10, 10, "#4878a8"))
    body.append(_text(w - 185, 39, "started", size=10))
    body.append(_rect(w - 120, 30, 10, 10, "#c06048"))
    body.append(_text(w - 105, 39, "stopped", size=10))
    dst.write_text(_svg(w, h, body))
    return dst


_SERIES_COLORS = ("#4878a8", "#c06048", "#6aa56a", "#9467bd", "#8c564b",
                  "#e377c2", "#7f7f7f", "#bcbd22")


def render_learning_curve(src: Path, dst: Path) -> Path:
    rows = [r for r in _read_tsv(src) if r["mean_f1"]]
    w, h = 900, 420
    panel_w = 400
    body = [_text(20, 24, "learning curves: micro-F1 vs training fraction")]
    for p, task in enumerate(("started", "stopped")):
        left = 60 + p * (panel_w + 60)
        bottom, top = 330, 60
        plot_h, plot_w = bottom - top, panel_w - 40
        body.append(_text(left + plot_w / 2, top - 12, task, anchor="middle"))
        for frac in (0.0, 0.5, 1.0):
            y = bottom - frac * plot_h
            body.append(_line(left, y, left + plot_w, y, stroke="#ddd"))
            body.append(_text(left - 8, y + 4, f"{frac:.1f}", anchor="end",
                              size=10))
        task_rows = [r for r in rows if r["task"] == task]
        series = sorted({(r["model"], r["scheme"]) for r in task_rows})
        xs = sorted({float(r["fraction"]) for r in task_rows})
        if not xs:
            continue
        x_for = {f: left + (math.log10(max(f, 1e-3)) - math.log10(max(min(xs), 1e-3)))
                 / max(1e-9, (math.log10(max(xs)) - math.log10(max(min(xs), 1e-3))))
                 * plot_w for f in xs}
        for si, (model, scheme) in enumerate(series):
            color = _SERIES_COLORS[si % len(_SERIES_COLORS)]
            pts = sorted(((float(r["fraction"]), float(r["mean_f1"]))
                          for r in task_rows
                          if r["model"] == model and r["scheme"] == scheme))
            path_parts = []
            for f, v in pts:
                path_parts.append(f"{x_for[f]:.1f},{bottom - v * plot_h:.1f}")
            if len(path_parts) > 1:
                body.append(f'<polyline points="{" ".join(path_parts)}" '
                            f'fill="none" stroke="{color}"/>')
            for f, v in pts:
                body.append(f'<circle cx="{x_for[f]:.1f}" '
                            f'cy="{bottom - v * plot_h:.1f}" r="3" '
                            f'fill="{color}"/>')
            body.append(_text(left + plot_w + 6, top + 14 * si + 10,
                              f"{model}/{scheme}", size=9, fill=color))
        for key, label in ((f"llm_f1_{task}", "zero-shot LLM"),
                           (f"rf_tfidf_{task}", "RF tf-idf")):
            v = PUBLISHED_REFERENCE[key]
            y = bottom - v * plot_h
            body.append(_line(left, y, left + plot_w, y, stroke="#999",
                              dash="4,3"))
            body.append(_text(left + 4, y - 4,
                              f"published-reference {label} {v:.3f}",
                              size=9, fill="#666"))
        for f in xs:
            body.append(_text(x_for[f], bottom + 14, f"{f:g}", anchor="middle",
                              size=9))
    dst.write_text(_svg(w, h, body))
    return dst


def render_topic_keywords(src: Path, dst: Path) -> Path:
    rows = _read_tsv(src)
    topics: dict[str, list[str]] = {}
    for r in rows:
        topics.setdefault(r["topic"], []).append(r["term"])
    n = max(1, len(topics))
    row_h = 22
    h = 60 + n * row_h
    body = [_text(20, 24, "topic keywords (class-based TF-IDF, top terms)")]
    y = 50
    for topic in sorted(topics, key=lambda t: int(t)):
        terms = ", ".join(topics[topic][:10])
        body.append(_text(20, y, f"topic {topic}:", fill="#4878a8"))
        body.append(_text(110, y, terms))
        y += row_h
    dst.write_text(_svg(960, h, body))
    return dst


def _heat_color(v: float, vmax: float) -> str:
    """Diverging blue-white-red on log2 lift, clipped to +/- vmax."""
    if v != v:  # NaN
        return "#cccccc"
    t = max(-1.0, min(1.0, v / vmax))
    if t >= 0:
        r, g, b = 255, int(255 * (1 - t)), int(255 * (1 - t))
    else:
        r, g, b = int(255 * (1 + t)), int(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def render_enrichment_heatmap(src: Path, dst: Path) -> Path:
    doc = json.loads(src.read_text())
    topics = doc["topic_ids"]
    subgroups = doc["subgroups"]
    grid = doc["log2_lift"]
    cell, left, top = 56, 150, 70
    w = left + cell * len(subgroups) + 40
    h = top + cell * len(topics) + 70
    body = [_text(20, 24, "topic enrichment by subgroup (log2 lift; red = "
                          "over-represented)"),
            _text(20, 42, f"n={doc['n_notes']} notes, attribute "
                          f"{doc['subgroup_attribute']}", size=10, fill="#666")]
    for j, sub in enumerate(subgroups):
        body.append(_text(left + j * cell + cell / 2, top - 8, sub[:12],
                          anchor="middle", size=9))
    for i, topic in enumerate(topics):
        body.append(_text(left - 8, top + i * cell + cell / 2 + 4,
                          f"topic {topic}", anchor="end", size=10))
        for j in range(len(subgroups)):
            v = grid[i][j]
            v = float("nan") if v is None else float(v)
            body.append(_rect(left + j * cell, top + i * cell, cell - 2,
                              cell - 2, _heat_color(v, 2.0), stroke="#eee"))
            label = "n/a" if v != v else f"{v:.2f}"
            body.append(_text(left + j * cell + (cell - 2) / 2,
                              top + i * cell + cell / 2 + 4, label,
                              anchor="middle", size=9))
    body.append(_text(20, h - 16, "published-reference: subgroup enrichments "
                      "in the source study derive from private notes and are "
                      "not reproduced here", size=10, fill="#666"))
    dst.write_text(_svg(w, h, body))
    return dst


# ---------------------------------------------------------------------------


def emit_report(out_dir: str | Path) -> list[Path]:
    """Render every chart whose source artifact exists; placeholders
    otherwise. Raises ReportError only when every source is missing."""
    out = Path(out_dir)
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    renderers = {
        "prompts_eval/prompt_scores.tsv": ("prompt_scores.svg",
                                           render_prompt_scores),
        "baselines/learning_curve.tsv": ("learning_curve.svg",
                                         render_learning_curve),
        "topics/topic_keywords.tsv": ("topic_keywords.svg",
                                      render_topic_keywords),
        "enrich/enrichment.json": ("enrichment_heatmap.svg",
                                   render_enrichment_heatmap),
    }
    produced: list[Path] = []
    rendered_any = False
    for rel, (name, renderer) in renderers.items():
        src = out / rel
        dst = report_dir / name
        if src.exists():
            produced.append(renderer(src, dst))
            rendered_any = True
        else:
            produced.append(_placeholder(dst, rel))
    if not rendered_any:
        raise ReportError("no report sources found; run earlier stages first")
    return produced
