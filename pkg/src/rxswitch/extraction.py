"""Prompt rendering, response parsing, and normalization of (started,
stopped, reason) triples extracted from switch notes.

The six prompt variants cross two system roles (generic assistant vs
clinical specialist) with three output formats. Parsing is total: a strict
parse of the declared format is followed by a fallback cascade, ending with
whole-text-as-reason, so arbitrary provider output never raises.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from .switching import Modality, ModalityLexicon, map_to_modality
from .text import squash_ws

if TYPE_CHECKING:
    from .corpus import ClinicalNote
    from .provider import ChatProvider

SYSTEM_ROLES = ("generic_assistant", "clinical_specialist")
OUTPUT_FORMATS = ("structured_object", "pipe_delimited", "labeled_lines")
#: fallback order after the declared format fails
PARSE_CASCADE = ("structured_object", "labeled_lines", "pipe_delimited")

BEST_PROMPT_DESIGNATION = ("clinical_specialist", "structured_object")


class PromptSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSpec:
    prompt_id: int
    system_role: str
    output_format: str
    system_text: str
    template: str

    def __post_init__(self):
        if not 1 <= self.prompt_id <= 6:
            raise PromptSpecError(f"prompt_id {self.prompt_id} outside 1..6")
        if self.system_role not in SYSTEM_ROLES:
            raise PromptSpecError(f"unknown system_role {self.system_role!r}")
        if self.output_format not in OUTPUT_FORMATS:
            raise PromptSpecError(f"unknown output_format {self.output_format!r}")
        if self.template.count("{note}") != 1:
            raise PromptSpecError(
                f"prompt {self.prompt_id}: template must contain exactly one "
                "{note} placeholder")


def load_prompt_specs(prompt_dir: str | Path | None = None) -> dict[int, PromptSpec]:
    """Load the six prompt fixtures and check they cover the full 2x3 cross
    of system roles and output formats."""
    if prompt_dir is None:
        from .fixtures import fixture_path

        prompt_dir = fixture_path("prompts")
    specs: dict[int, PromptSpec] = {}
    for path in sorted(Path(prompt_dir).glob("prompt_*.json")):
        raw = json.loads(path.read_text())
        spec = PromptSpec(**raw)
        if spec.prompt_id in specs:
            raise PromptSpecError(f"duplicate prompt_id {spec.prompt_id}")
        specs[spec.prompt_id] = spec
    combos = {(s.system_role, s.output_format) for s in specs.values()}
    if len(specs) != 6 or len(combos) != 6:
        raise PromptSpecError(
            f"expected the full 2x3 role/format cross, got {sorted(combos)}")
    return specs


def render_prompt(spec: PromptSpec, note: "ClinicalNote") -> list[dict[str, str]]:
    """Two chat messages: the system role sentence and the user message with
    the note substituted once (zero-shot; no examples)."""
    if not note.text:
        raise ValueError(f"note {note.note_id} has empty text")
    return [
        {"role": "system", "content": spec.system_text},
        {"role": "user", "content": spec.template.replace("{note}", note.text)},
    ]


# ---------------------------------------------------------------------------
# parsing

_LABEL_RE = re.compile(r"^\s*(started|stopped|reason)\s*[:=-]\s*(.*?)\s*$",
                       re.IGNORECASE)
_SEG_RE = re.compile(r"^\s*(started|stopped|reason)\s*[:=]\s*(.*?)\s*$",
                     re.IGNORECASE | re.DOTALL)
_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n?|```\s*$")


def _coerce_str(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, (list, tuple)):
        return ", ".join(_coerce_str(v) for v in value)
    return str(value)


def _try_structured(raw: str):
    text = _FENCE_RE.sub("", raw.strip()).strip()
    candidates = [text]
    start, end = text.find("{"), text.rfind("}")
    if start >= 0 and end > start:
        candidates.append(text[start:end + 1])
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except Exception:
            continue
        if not isinstance(obj, dict):
            continue
        lowered = {str(k).lower(): v for k, v in obj.items()}
        if "started" not in lowered and "stopped" not in lowered:
            continue
        return (
            _coerce_str(lowered.get("started", "none")),
            _coerce_str(lowered.get("stopped", "none")),
            _coerce_str(lowered.get("reason", "")),
        )
    return None


def _try_labeled_lines(raw: str):
    fields: dict[str, str] = {}
    for line in raw.splitlines():
        m = _LABEL_RE.match(line)
        if m:
            fields.setdefault(m.group(1).lower(), m.group(2))
    if len(fields) < 2:
        return None
    return (fields.get("started", "none"), fields.get("stopped", "none"),
            fields.get("reason", ""))


def _try_pipe(raw: str):
    if "|" not in raw:
        return None
    segments = [s for s in raw.strip().split("|")]
    fields: dict[str, str] = {}
    for seg in segments:
        m = _SEG_RE.match(seg)
        if m:
            fields.setdefault(m.group(1).lower(), m.group(2).strip())
    if len(fields) >= 2:
        return (fields.get("started", "none"), fields.get("stopped", "none"),
                fields.get("reason", ""))
    if len(segments) == 3 and not fields:
        s, t, r = (seg.strip() for seg in segments)
        return (s, t, r)
    return None


_PARSERS = {
    "structured_object": _try_structured,
    "labeled_lines": _try_labeled_lines,
    "pipe_delimited": _try_pipe,
}


def parse_extraction(raw_response: str, output_format: str) -> tuple[str, str, str]:
    """Parse a provider response into (started_raw, stopped_raw, reason_raw).

    Total: the declared format is tried strictly, then the cascade
    structured_object -> labeled_lines -> pipe_delimited, and finally the
    whole text becomes the reason with started/stopped = "none".
    """
    order = [output_format] + [f for f in PARSE_CASCADE if f != output_format]
    for fmt in order:
        try:
            result = _PARSERS[fmt](raw_response)
        except Exception:
            result = None
        if result is not None:
            return result
    return ("none", "none", raw_response.strip())


# ---------------------------------------------------------------------------
# normalization

#: raw fragments meaning "no contraceptive named"
NONE_SYNONYMS = frozenset({
    "", "none", "n/a", "na", "not mentioned", "not specified", "nothing",
    "no change", "unknown",
})

_FRAGMENT_SPLIT = re.compile(r",|\band\b", re.IGNORECASE)


@dataclass(frozen=True)
class NormalizedExtraction:
    started: frozenset[Modality]
    stopped: frozenset[Modality]
    reason: str
    #: fragments that mapped to no modality (the normalization log)
    unmatched: tuple[str, ...]


def _normalize_field(raw: str, lexicon: ModalityLexicon,
                     unmatched: list[str]) -> frozenset[Modality]:
    if raw.strip().lower() in NONE_SYNONYMS:
        return frozenset()
    mods: set[Modality] = set()
    for fragment in _FRAGMENT_SPLIT.split(raw):
        fragment = fragment.strip()
        if not fragment or fragment.lower() in NONE_SYNONYMS:
            continue
        mod = map_to_modality(fragment, lexicon)
        if isinstance(mod, Modality) and mod is not Modality.NONE:
            mods.add(mod)
        else:
            unmatched.append(fragment)
    return frozenset(mods)


def normalize_extraction(
    raw_triple: tuple[str, str, str], lexicon: ModalityLexicon
) -> NormalizedExtraction:
    """Map raw answer fragments (split on commas and "and") to modalities via
    the lexicon; "none"-like fragments map to the empty set and anything
    unmapped is kept in the log rather than silently dropped."""
    started_raw, stopped_raw, reason_raw = raw_triple
    unmatched: list[str] = []
    return NormalizedExtraction(
        started=_normalize_field(started_raw, lexicon, unmatched),
        stopped=_normalize_field(stopped_raw, lexicon, unmatched),
        reason=reason_raw,
        unmatched=tuple(unmatched),
    )


def reason_supported(note_text: str, reason: str) -> bool:
    """True when every clause of the extracted reason appears verbatim
    (whitespace/case-insensitively) in the note. Used to flag hallucinated
    content on synthetic corpora, where true reasons are embedded verbatim."""
    if not reason.strip():
        return True
    note = squash_ws(note_text)
    for clause in re.split(r"[;.]", reason):
        clause = squash_ws(clause)
        if clause and clause not in note:
            return False
    return True


# ---------------------------------------------------------------------------
# extraction loop


@dataclass(frozen=True)
class ExtractionResult:
    note_id: str
    prompt_id: int
    started_raw: str
    stopped_raw: str
    reason_raw: str
    started: frozenset[Modality]
    stopped: frozenset[Modality]
    reason: str
    provider_latency_ms: int
    raw_response: str
    unmatched: tuple[str, ...] = ()
    error: str | None = None

    def to_record(self) -> dict:
        return {
            "note_id": self.note_id,
            "prompt_id": self.prompt_id,
            "started_raw": self.started_raw,
            "stopped_raw": self.stopped_raw,
            "reason_raw": self.reason_raw,
            "started": sorted(m.value for m in self.started),
            "stopped": sorted(m.value for m in self.stopped),
            "reason": self.reason,
            "provider_latency_ms": self.provider_latency_ms,
            "raw_response": self.raw_response,
            "unmatched": list(self.unmatched),
            "error": self.error,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ExtractionResult":
        return cls(
            note_id=rec["note_id"],
            prompt_id=rec["prompt_id"],
            started_raw=rec["started_raw"],
            stopped_raw=rec["stopped_raw"],
            reason_raw=rec["reason_raw"],
            started=frozenset(Modality(m) for m in rec["started"]),
            stopped=frozenset(Modality(m) for m in rec["stopped"]),
            reason=rec["reason"],
            provider_latency_ms=rec["provider_latency_ms"],
            raw_response=rec["raw_response"],
            unmatched=tuple(rec.get("unmatched", ())),
            error=rec.get("error"),
        )


def extract_switch_info(
    notes: Sequence["ClinicalNote"],
    spec: PromptSpec,
    provider: "ChatProvider",
    lexicon: ModalityLexicon,
    max_parallel: int = 4,
) -> list[ExtractionResult]:
    """Run one prompt over many notes with bounded parallelism.

    Results come back in input order no matter the completion order. Notes
    whose provider call fails after retries carry an error marker and empty
    fields instead of raising.
    """
    from .provider import ProviderError

    def run_one(note: "ClinicalNote") -> ExtractionResult:
        messages = render_prompt(spec, note)
        try:
            reply = provider.complete(note.note_id, messages, spec.output_format)
        except ProviderError as e:
            return ExtractionResult(
                note_id=note.note_id, prompt_id=spec.prompt_id,
                started_raw="", stopped_raw="", reason_raw="",
                started=frozenset(), stopped=frozenset(), reason="",
                provider_latency_ms=0, raw_response="", error=str(e),
            )
        triple = parse_extraction(reply.text, spec.output_format)
        norm = normalize_extraction(triple, lexicon)
        return ExtractionResult(
            note_id=note.note_id, prompt_id=spec.prompt_id,
            started_raw=triple[0], stopped_raw=triple[1], reason_raw=triple[2],
            started=norm.started, stopped=norm.stopped, reason=norm.reason,
            provider_latency_ms=reply.latency_ms, raw_response=reply.text,
            unmatched=norm.unmatched,
        )

    if max_parallel <= 1 or len(notes) <= 1:
        return [run_one(n) for n in notes]
    with ThreadPoolExecutor(max_workers=max_parallel) as pool:
        futures = [pool.submit(run_one, n) for n in notes]
        return [f.result() for f in futures]
