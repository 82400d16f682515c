"""Longitudinal corpus model and line-delimited JSON storage.

A corpus is four JSONL files (patients, orders, notes, optional gold) plus a
meta.json with the schema version. Loading validates referential integrity;
the corpus is immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable

from .switching import Modality
from .text import token_count

SCHEMA_VERSION = "1"


class RaceEthnicity(str, Enum):
    WHITE = "White"
    BLACK = "Black or African American"
    LATINX = "Latinx"
    ASIAN = "Asian"
    OTHER = "Other"
    MULTI = "Multi-Race/Ethnicity"
    MISSING = "Missing"


class PreferredLanguage(str, Enum):
    ENGLISH = "English"
    SPANISH = "Spanish"
    OTHER = "Other"
    MISSING = "Missing"


def _coerce_enum(cls, value):
    """Unknown demographic strings map to Missing rather than failing."""
    try:
        return cls(value)
    except ValueError:
        return cls.MISSING


@dataclass(frozen=True)
class Patient:
    patient_id: str
    birth_date: date
    race_ethnicity: RaceEthnicity
    preferred_language: PreferredLanguage


@dataclass(frozen=True)
class MedicationOrder:
    order_id: str
    patient_id: str
    encounter_date: date | None  # documented start date; None is dropped later
    raw_name: str
    note_id: str | None


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    encounter_date: date
    text: str
    token_count: int  # computed, never stored in files

    @classmethod
    def make(cls, note_id: str, patient_id: str, encounter_date: date, text: str):
        return cls(note_id, patient_id, encounter_date, text, token_count(text))


@dataclass(frozen=True)
class GoldLabel:
    note_id: str
    started: frozenset[Modality]
    stopped: frozenset[Modality]
    reason_text: str
    reason_topic: str | None = None


@dataclass
class Corpus:
    patients: list[Patient]
    orders: list[MedicationOrder]
    notes: list[ClinicalNote]
    gold: list[GoldLabel] | None = None
    #: patient_id -> date of the patient's last encounter of any kind
    last_encounter: dict[str, date] = field(default_factory=dict)

    def gold_by_note(self) -> dict[str, GoldLabel]:
        return {g.note_id: g for g in self.gold or []}

    def notes_by_id(self) -> dict[str, ClinicalNote]:
        return {n.note_id: n for n in self.notes}

    def patients_by_id(self) -> dict[str, Patient]:
        return {p.patient_id: p for p in self.patients}


@dataclass(frozen=True)
class ValidationFinding:
    rule: str
    record_id: str
    message: str
    severity: str = "error"  # "error" | "warning"


class CorpusError(Exception):
    pass


class CorpusLoadError(CorpusError):
    """Missing file, unknown schema version, or unreadable input."""


class CorpusValidationError(CorpusError):
    def __init__(self, findings: list[ValidationFinding]):
        self.findings = findings
        lines = "; ".join(f"{f.rule}({f.record_id})" for f in findings[:20])
        super().__init__(f"{len(findings)} validation error(s): {lines}")


def validate_corpus(corpus: Corpus) -> list[ValidationFinding]:
    """Check every corpus invariant; returns findings (never raises).

    Error findings break referential integrity or uniqueness; warning
    findings mark records the cohort filters will drop (missing start date,
    missing note reference, empty note text).
    """
    findings: list[ValidationFinding] = []

    seen_p: set[str] = set()
    for p in corpus.patients:
        if p.patient_id in seen_p:
            findings.append(
                ValidationFinding("unique_patient_id", p.patient_id,
                                  f"duplicate patient_id {p.patient_id!r}")
            )
        seen_p.add(p.patient_id)

    seen_n: set[str] = set()
    for n in corpus.notes:
        if n.note_id in seen_n:
            findings.append(
                ValidationFinding("unique_note_id", n.note_id,
                                  f"duplicate note_id {n.note_id!r}")
            )
        seen_n.add(n.note_id)
        if n.patient_id not in seen_p:
            findings.append(
                ValidationFinding("unresolved_patient", n.note_id,
                                  f"note {n.note_id!r} references unknown patient "
                                  f"{n.patient_id!r}")
            )
        if not n.text:
            findings.append(
                ValidationFinding("empty_note_text", n.note_id,
                                  f"note {n.note_id!r} has empty text",
                                  severity="warning")
            )

    seen_o: set[str] = set()
    for o in corpus.orders:
        if o.order_id in seen_o:
            findings.append(
                ValidationFinding("unique_order_id", o.order_id,
                                  f"duplicate order_id {o.order_id!r}")
            )
        seen_o.add(o.order_id)
        if o.patient_id not in seen_p:
            findings.append(
                ValidationFinding("unresolved_patient", o.order_id,
                                  f"order {o.order_id!r} references unknown patient "
                                  f"{o.patient_id!r}")
            )
        if o.note_id is not None and o.note_id not in seen_n:
            findings.append(
                ValidationFinding("unresolved_note", o.order_id,
                                  f"order {o.order_id!r} references unknown note "
                                  f"{o.note_id!r}")
            )
        if o.encounter_date is None:
            findings.append(
                ValidationFinding("missing_start_date", o.order_id,
                                  f"order {o.order_id!r} has no start date",
                                  severity="warning")
            )
        if o.note_id is None:
            findings.append(
                ValidationFinding("missing_note_ref", o.order_id,
                                  f"order {o.order_id!r} has no associated note",
                                  severity="warning")
            )

    for g in corpus.gold or []:
        if g.note_id not in seen_n:
            findings.append(
                ValidationFinding("unresolved_note", g.note_id,
                                  f"gold label references unknown note {g.note_id!r}")
            )

    last_order: dict[str, date] = {}
    for o in corpus.orders:
        if o.encounter_date is not None:
            prev = last_order.get(o.patient_id)
            if prev is None or o.encounter_date > prev:
                last_order[o.patient_id] = o.encounter_date
    for pid, last in last_order.items():
        seen = corpus.last_encounter.get(pid)
        if seen is not None and seen < last:
            findings.append(
                ValidationFinding("last_encounter_before_orders", pid,
                                  f"last_encounter_date {seen} precedes order on {last}")
            )

    return findings


# ---------------------------------------------------------------------------
# serialization

def _d2s(d: date | None) -> str | None:
    return None if d is None else d.isoformat()


def _s2d(s: str | None) -> date | None:
    return None if s is None else date.fromisoformat(s)


def patient_record(p: Patient, last_encounter: date | None) -> dict:
    return {
        "patient_id": p.patient_id,
        "birth_date": _d2s(p.birth_date),
        "race_ethnicity": p.race_ethnicity.value,
        "preferred_language": p.preferred_language.value,
        "last_encounter_date": _d2s(last_encounter),
    }


def order_record(o: MedicationOrder) -> dict:
    return {
        "order_id": o.order_id,
        "patient_id": o.patient_id,
        "encounter_date": _d2s(o.encounter_date),
        "raw_name": o.raw_name,
        "note_id": o.note_id,
    }


def note_record(n: ClinicalNote) -> dict:
    return {
        "note_id": n.note_id,
        "patient_id": n.patient_id,
        "encounter_date": _d2s(n.encounter_date),
        "text": n.text,
    }


def gold_record(g: GoldLabel) -> dict:
    return {
        "note_id": g.note_id,
        "started": sorted(m.value for m in g.started),
        "stopped": sorted(m.value for m in g.stopped),
        "reason_text": g.reason_text,
        "reason_topic": g.reason_topic,
    }


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


def write_jsonl(path: Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(
        dumps_record({"schema_version": SCHEMA_VERSION}) + "\n")
    write_jsonl(out / "patients.jsonl",
                (patient_record(p, corpus.last_encounter.get(p.patient_id))
                 for p in corpus.patients))
    write_jsonl(out / "orders.jsonl", map(order_record, corpus.orders))
    write_jsonl(out / "notes.jsonl", map(note_record, corpus.notes))
    if corpus.gold is not None:
        write_jsonl(out / "gold.jsonl", map(gold_record, corpus.gold))


def _parse_lines(path: Path, parse, findings, malformed_rule="malformed_line"):
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(parse(json.loads(line)))
        except (ValueError, KeyError, TypeError) as e:
            findings.append(
                ValidationFinding(malformed_rule, f"{path.name}:{lineno}",
                                  f"{path.name} line {lineno}: {e}")
            )
    return out


def load_corpus(path: str | Path, schema_version: str = SCHEMA_VERSION) -> Corpus:
    """Load a corpus directory; raises CorpusLoadError for missing files or
    an unknown schema version, CorpusValidationError when error-severity
    findings (malformed lines, broken references, duplicate ids) exist."""
    root = Path(path)
    if schema_version != SCHEMA_VERSION:
        raise CorpusLoadError(f"unknown schema_version {schema_version!r}")
    meta_path = root / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("schema_version") != schema_version:
            raise CorpusLoadError(
                f"corpus written with schema {meta.get('schema_version')!r}, "
                f"expected {schema_version!r}")
    for name in ("patients.jsonl", "orders.jsonl", "notes.jsonl"):
        if not (root / name).exists():
            raise CorpusLoadError(f"missing corpus file: {root / name}")

    findings: list[ValidationFinding] = []
    last_encounter: dict[str, date] = {}

    def parse_patient(rec: dict) -> Patient:
        p = Patient(
            patient_id=rec["patient_id"],
            birth_date=_s2d(rec["birth_date"]),  # type: ignore[arg-type]
            race_ethnicity=_coerce_enum(RaceEthnicity, rec.get("race_ethnicity")),
            preferred_language=_coerce_enum(PreferredLanguage,
                                            rec.get("preferred_language")),
        )
        if rec.get("last_encounter_date"):
            last_encounter[p.patient_id] = _s2d(rec["last_encounter_date"])
        return p

    def parse_order(rec: dict) -> MedicationOrder:
        return MedicationOrder(
            order_id=rec["order_id"],
            patient_id=rec["patient_id"],
            encounter_date=_s2d(rec.get("encounter_date")),
            raw_name=rec["raw_name"],
            note_id=rec.get("note_id"),
        )

    def parse_note(rec: dict) -> ClinicalNote:
        return ClinicalNote.make(
            note_id=rec["note_id"],
            patient_id=rec["patient_id"],
            encounter_date=_s2d(rec["encounter_date"]),  # type: ignore[arg-type]
            text=rec["text"],
        )

    def parse_gold(rec: dict) -> GoldLabel:
        return GoldLabel(
            note_id=rec["note_id"],
            started=frozenset(Modality(m) for m in rec["started"]),
            stopped=frozenset(Modality(m) for m in rec["stopped"]),
            reason_text=rec["reason_text"],
            reason_topic=rec.get("reason_topic"),
        )

    patients = _parse_lines(root / "patients.jsonl", parse_patient, findings)
    orders = _parse_lines(root / "orders.jsonl", parse_order, findings)
    notes = _parse_lines(root / "notes.jsonl", parse_note, findings)
    gold = None
    if (root / "gold.jsonl").exists():
        gold = _parse_lines(root / "gold.jsonl", parse_gold, findings)

    corpus = Corpus(patients=patients, orders=orders, notes=notes, gold=gold,
                    last_encounter=last_encounter)
    findings.extend(validate_corpus(corpus))
    errors = [f for f in findings if f.severity == "error"]
    if errors:
        raise CorpusValidationError(errors)
    return corpus


def corpus_digest(corpus: Corpus) -> str:
    """Stable content hash over the canonical serialization."""
    h = hashlib.sha256()
    for p in corpus.patients:
        h.update(dumps_record(
            patient_record(p, corpus.last_encounter.get(p.patient_id))).encode())
    for o in corpus.orders:
        h.update(dumps_record(order_record(o)).encode())
    for n in corpus.notes:
        h.update(dumps_record(note_record(n)).encode())
    for g in corpus.gold or []:
        h.update(dumps_record(gold_record(g)).encode())
    return h.hexdigest()
