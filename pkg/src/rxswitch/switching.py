"""Contraceptive modalities, the drug-name lexicon, and switch detection.

A switch is a change in the set of prescribed modalities between two
consecutive retained encounters of the same patient. Orders are mapped to
modalities by an ordered regex lexicon (first match wins); encounters whose
orders are all excluded or unmatched never enter the timeline.
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .corpus import Corpus


class Modality(str, Enum):
    ORAL = "oral"
    IMPLANT = "implant"
    IUD = "iud"
    INJECTION = "injection"
    TRANSDERMAL = "transdermal"
    INTRAVAGINAL = "intravaginal"
    NONE = "none"  # extraction/label placeholder only, never prescribed


#: The six modalities a prescription can map to (NONE is a placeholder).
PRESCRIBED_MODALITIES = (
    Modality.ORAL,
    Modality.IMPLANT,
    Modality.IUD,
    Modality.INJECTION,
    Modality.TRANSDERMAL,
    Modality.INTRAVAGINAL,
)

#: Sentinels returned by map_to_modality for non-modality outcomes.
EXCLUDED = "excluded"
UNMATCHED = "unmatched"


def primary_label(modalities: Iterable[Modality]) -> Modality:
    """Collapse a modality set to a single label: lexicographically smallest,
    NONE when empty. This is the reduction used for silver labels and kappa."""
    ms = sorted(set(modalities), key=lambda m: m.value)
    return ms[0] if ms else Modality.NONE


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class ModalityLexicon:
    """Ordered (pattern, modality) inclusion rules plus exclusion patterns.

    Patterns are case-insensitive regexes; the first inclusion match wins.
    Exclusions (non-drug and emergency contraceptives) take precedence over
    inclusions.
    """

    inclusions: tuple[tuple[re.Pattern, Modality], ...]
    exclusions: tuple[re.Pattern, ...]

    @classmethod
    def from_rules(
        cls,
        inclusion_rules: Iterable[tuple[str, Modality]],
        exclusion_rules: Iterable[str] = (),
    ) -> "ModalityLexicon":
        try:
            inc = tuple(
                (re.compile(pat, re.IGNORECASE), mod) for pat, mod in inclusion_rules
            )
            exc = tuple(re.compile(pat, re.IGNORECASE) for pat in exclusion_rules)
        except re.error as e:
            raise LexiconError(f"bad lexicon pattern: {e}") from e
        return cls(inclusions=inc, exclusions=exc)

    @classmethod
    def from_file(cls, path: str | Path) -> "ModalityLexicon":
        """Parse a lexicon file: one rule per line, `modality<TAB>regex` or
        `exclude<TAB>regex`. Blank lines and lines starting with # skipped."""
        inc: list[tuple[str, Modality]] = []
        exc: list[str] = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                kind, pattern = line.split("\t", 1)
            except ValueError:
                raise LexiconError(f"{path}:{lineno}: expected `kind<TAB>regex`")
            kind = kind.strip().lower()
            if kind == "exclude":
                exc.append(pattern)
            else:
                try:
                    inc.append((pattern, Modality(kind)))
                except ValueError:
                    raise LexiconError(f"{path}:{lineno}: unknown modality {kind!r}")
        return cls.from_rules(inc, exc)

    def inclusion_matches(self, raw_name: str) -> list[Modality]:
        """All inclusion rules matching raw_name, in rule order (for audits)."""
        return [mod for pat, mod in self.inclusions if pat.search(raw_name)]


def default_lexicon() -> ModalityLexicon:
    from .fixtures import fixture_path

    return ModalityLexicon.from_file(fixture_path("lexicon.tsv"))


def map_to_modality(raw_name: str, lexicon: ModalityLexicon) -> Modality | str:
    """Map a free-text medication string to a Modality, EXCLUDED or UNMATCHED."""
    for pat in lexicon.exclusions:
        if pat.search(raw_name):
            return EXCLUDED
    for pat, mod in lexicon.inclusions:
        if pat.search(raw_name):
            return mod
    return UNMATCHED


@dataclass(frozen=True)
class Encounter:
    """One retained encounter: the deduplicated modality set prescribed on a
    date, plus the note evidencing it (smallest note_id on ties)."""

    patient_id: str
    date: date
    modalities: frozenset[Modality]
    note_id: str


@dataclass(frozen=True)
class SwitchEvent:
    patient_id: str
    prev_encounter_date: date
    curr_encounter_date: date
    stopped: frozenset[Modality]
    started: frozenset[Modality]
    note_id: str

    def __post_init__(self):
        if self.started & self.stopped:
            raise ValueError("started and stopped overlap")
        if not (self.started or self.stopped):
            raise ValueError("empty switch event")
        if not self.prev_encounter_date < self.curr_encounter_date:
            raise ValueError("encounters out of order")


@dataclass
class FilterReport:
    """Counts of orders/patients dropped by each cohort filter."""

    missing_start_date: int = 0
    missing_note: int = 0
    excluded_drug: int = 0
    unmatched_drug: int = 0
    short_note: int = 0
    duplicates: int = 0
    no_followup: int = 0  # patients dropped for lacking follow-up
    retained_orders: int = 0
    retained_patients: int = 0

    def as_dict(self) -> dict:
        return dict(vars(self))


def filter_orders(
    corpus: "Corpus",
    lexicon: ModalityLexicon,
    min_tokens: int = 50,
    min_followup_days: int = 183,
) -> tuple[dict[str, list[Encounter]], FilterReport]:
    """Apply the cohort filters and build per-patient encounter timelines.

    Drops orders with no start date or note, orders whose note has
    token_count <= min_tokens (strictly more than min_tokens required),
    excluded/unmatched drugs, and duplicate (encounter_date, modality) pairs;
    then drops patients whose last encounter is less than min_followup_days
    after their first retained order. Timelines are sorted by date.
    """
    report = FilterReport()
    notes = {n.note_id: n for n in corpus.notes}

    # (patient, date) -> {modality -> note_id}; duplicates collapse here
    by_encounter: dict[tuple[str, date], dict[Modality, str]] = defaultdict(dict)
    for order in corpus.orders:
        if order.encounter_date is None:
            report.missing_start_date += 1
            continue
        if order.note_id is None or order.note_id not in notes:
            report.missing_note += 1
            continue
        note = notes[order.note_id]
        if note.token_count <= min_tokens:
            report.short_note += 1
            continue
        mod = map_to_modality(order.raw_name, lexicon)
        if mod == EXCLUDED:
            report.excluded_drug += 1
            continue
        if mod == UNMATCHED:
            report.unmatched_drug += 1
            continue
        slot = by_encounter[(order.patient_id, order.encounter_date)]
        if mod in slot:
            report.duplicates += 1
            slot[mod] = min(slot[mod], order.note_id)
        else:
            slot[mod] = order.note_id

    timelines: dict[str, list[Encounter]] = defaultdict(list)
    for (pid, day), mods in sorted(by_encounter.items()):
        timelines[pid].append(
            Encounter(
                patient_id=pid,
                date=day,
                modalities=frozenset(mods),
                note_id=min(mods.values()),
            )
        )

    retained: dict[str, list[Encounter]] = {}
    for pid, encs in timelines.items():
        first = min(e.date for e in encs)
        last_seen = corpus.last_encounter.get(pid, max(e.date for e in encs))
        if (last_seen - first).days < min_followup_days:
            report.no_followup += 1
            continue
        retained[pid] = sorted(encs, key=lambda e: e.date)

    report.retained_orders = sum(len(e.modalities) for encs in retained.values() for e in encs)
    report.retained_patients = len(retained)
    return retained, report


def detect_switches(timeline: list[Encounter]) -> list[SwitchEvent]:
    """Emit one SwitchEvent per consecutive encounter pair whose modality sets
    differ with at least one modality started (pure discontinuations are not
    switches). The event references the current encounter's note."""
    for prev, curr in zip(timeline, timeline[1:]):
        if prev.date >= curr.date:
            raise ValueError(
                f"timeline unsorted or duplicated dates for {prev.patient_id}: "
                f"{prev.date} !< {curr.date}"
            )
    events = []
    for prev, curr in zip(timeline, timeline[1:]):
        started = curr.modalities - prev.modalities
        stopped = prev.modalities - curr.modalities
        if not started:
            continue
        events.append(
            SwitchEvent(
                patient_id=curr.patient_id,
                prev_encounter_date=prev.date,
                curr_encounter_date=curr.date,
                stopped=frozenset(stopped),
                started=frozenset(started),
                note_id=curr.note_id,
            )
        )
    return events


def detect_switches_all(
    timelines: dict[str, list[Encounter]]
) -> list[SwitchEvent]:
    """detect_switches over every patient, merged deterministically."""
    events: list[SwitchEvent] = []
    for pid in sorted(timelines):
        events.extend(detect_switches(timelines[pid]))
    events.sort(key=lambda e: (e.patient_id, e.curr_encounter_date))
    return events


@dataclass
class ArmStats:
    n: int
    age_mean: float | None
    age_sd: float | None
    by_race: dict[str, int]
    by_language: dict[str, int]
    by_first_modality: dict[str, int]


@dataclass
class CohortSummary:
    switch: ArmStats
    no_switch: ArmStats
    n_events: int
    #: pair_matrix[stopped][started] counts every (s, t) pair per event
    pair_matrix: dict[str, dict[str, int]]

    def pair_count(self, stopped: Modality, started: Modality) -> int:
        return self.pair_matrix[stopped.value][started.value]


def _age_years(birth: date, on: date) -> int:
    return int((on - birth).days / 365.25)


def _arm_stats(corpus: "Corpus", timelines, pids: Iterable[str]) -> ArmStats:
    patients = {p.patient_id: p for p in corpus.patients}
    races: Counter = Counter()
    langs: Counter = Counter()
    firsts: Counter = Counter()
    ages = []
    for pid in pids:
        p = patients[pid]
        races[p.race_ethnicity.value] += 1
        langs[p.preferred_language.value] += 1
        encs = timelines[pid]
        first_enc = encs[0]
        for m in sorted(first_enc.modalities, key=lambda m: m.value):
            firsts[m.value] += 1
        ages.append(_age_years(p.birth_date, first_enc.date))
    n = len(ages)
    if n == 0:
        mean = sd = None
    else:
        mean = sum(ages) / n
        sd = (sum((a - mean) ** 2 for a in ages) / (n - 1)) ** 0.5 if n > 1 else 0.0
    return ArmStats(
        n=n,
        age_mean=mean,
        age_sd=sd,
        by_race=dict(races),
        by_language=dict(langs),
        by_first_modality=dict(firsts),
    )


def summarize_cohort(
    corpus: "Corpus",
    timelines: dict[str, list[Encounter]],
    events: list[SwitchEvent],
) -> CohortSummary:
    """Demographic/first-modality tables per arm plus the 6x6 switch-pair
    matrix (each event contributes |stopped| x |started| cells)."""
    switched = {e.patient_id for e in events}
    stayed = set(timelines) - switched

    matrix = {
        s.value: {t.value: 0 for t in PRESCRIBED_MODALITIES}
        for s in PRESCRIBED_MODALITIES
    }
    for e in events:
        for s in e.stopped:
            for t in e.started:
                matrix[s.value][t.value] += 1

    return CohortSummary(
        switch=_arm_stats(corpus, timelines, sorted(switched)),
        no_switch=_arm_stats(corpus, timelines, sorted(stayed)),
        n_events=len(events),
        pair_matrix=matrix,
    )
