"""Seeded synthetic corpus generator.

Produces patients, prescription timelines, clinic-note paragraphs and gold
labels so the whole pipeline runs without protected data. Notes are
template-based English with distractor sentences; realism is not the goal,
label fidelity is: every planted switch note embeds the stopped drug name,
the started drug name, and a reason phrase from one topic family, and gets a
matching GoldLabel.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from datetime import date, timedelta
from pathlib import Path

from .corpus import (
    ClinicalNote,
    Corpus,
    GoldLabel,
    MedicationOrder,
    Patient,
    PreferredLanguage,
    RaceEthnicity,
)
from .switching import Modality, PRESCRIBED_MODALITIES
from .text import token_count

#: Drug names by modality. Each name matches exactly one lexicon inclusion
#: pattern (a property the test suite enforces).
DRUGS: dict[Modality, tuple[str, ...]] = {
    Modality.ORAL: (
        "Sprintec 28 tablet",
        "Lo Loestrin Fe 1-10 mg tablet",
        "norethindrone 0.35 mg tablet",
        "Yaz 3-0.02 mg tablet",
        "Apri 0.15-0.03 mg tablet",
    ),
    Modality.IUD: (
        "Mirena 52 mg system",
        "Paragard T 380A",
        "Kyleena 19.5 mg system",
        "Liletta 52 mg system",
    ),
    Modality.IMPLANT: ("Nexplanon 68 mg", "Jadelle 75 mg rod"),
    Modality.INJECTION: (
        "Depo-Provera 150 mg/mL",
        "medroxyprogesterone acetate 150 mg/mL syringe",
    ),
    Modality.TRANSDERMAL: ("Xulane 150-35 mcg/24 hr", "Twirla 120-30 mcg/24 hr"),
    Modality.INTRAVAGINAL: (
        "NuvaRing 0.12-0.015 mg/24 hr",
        "Annovera 0.15-0.013 mg/24 hr",
    ),
}

#: Reason phrase vocabulary, one family per grouped topic.
REASON_TOPICS: dict[str, tuple[str, ...]] = {
    "no_relevant_reason": (
        "no specific reason documented",
        "reason for change not discussed today",
    ),
    "spotting_irregular_bleeding": (
        "persistent spotting and irregular bleeding",
        "breakthrough bleeding nearly every week",
        "bothersome spotting between periods",
    ),
    "desire_to_switch": (
        "she would like to try a different contraceptive option",
        "patient requests a change in contraceptive method",
        "prefers a different option after discussing choices",
    ),
    "forgot_daily_pills": (
        "she frequently forgets to take the daily pill",
        "missing doses most weeks and wants something easier",
        "adherence to a daily schedule has been difficult",
    ),
    "irritation_rash": (
        "skin irritation and a rash at the application site",
        "local irritation with itching where it is applied",
    ),
    "iud_malposition_removal": (
        "the device was found malpositioned on ultrasound and removed",
        "displaced device confirmed on imaging, removal performed",
    ),
    "weight_gain_mood_changes": (
        "reports weight gain and mood changes since starting it",
        "notable weight gain along with low mood",
        "mood swings and weight increase attributed to the method",
    ),
    "irregular_menses_pain": (
        "irregular menses with cramping and pelvic pain",
        "painful, unpredictable periods since initiation",
    ),
    "insurance_coverage": (
        "insurance no longer covers this contraceptive",
        "coverage was denied at the pharmacy this month",
        "out-of-pocket cost is too high without coverage",
    ),
    "implant_removal": (
        "she requests removal of the arm implant",
        "implant removal performed at her request",
    ),
}

_DISTRACTORS = (
    "Vital signs are within normal limits today.",
    "She denies fevers, chills, or unintentional weight loss.",
    "Review of systems is otherwise negative.",
    "She exercises twice weekly and does not smoke.",
    "Immunizations are up to date per the record.",
    "Denies dysuria, hematuria, or abnormal discharge.",
    "Sleep and appetite are reported as normal.",
    "She works full time and lives with family.",
    "No new allergies reported; medication list reviewed.",
    "Last dental visit within the past year.",
    "Follow-up visit scheduled in three months.",
    "Patient verbalized understanding of the plan.",
    "Screening labs from last visit were unremarkable.",
    "Blood pressure well controlled without medication.",
    "She declines additional counseling materials at this time.",
)


@dataclass
class GeneratorConfig:
    n_patients: int = 1000
    switch_rate: float = 0.076
    #: probability of a second switch, given a first one
    extra_switch_rate: float = 0.25
    race_mixture: dict[str, float] = field(default_factory=lambda: {
        RaceEthnicity.WHITE.value: 0.40,
        RaceEthnicity.BLACK.value: 0.12,
        RaceEthnicity.LATINX.value: 0.18,
        RaceEthnicity.ASIAN.value: 0.18,
        RaceEthnicity.OTHER.value: 0.06,
        RaceEthnicity.MULTI.value: 0.04,
        RaceEthnicity.MISSING.value: 0.02,
    })
    language_mixture: dict[str, float] = field(default_factory=lambda: {
        PreferredLanguage.ENGLISH.value: 0.95,
        PreferredLanguage.SPANISH.value: 0.02,
        PreferredLanguage.OTHER.value: 0.02,
        PreferredLanguage.MISSING.value: 0.01,
    })
    #: reason-family sampling weights; None = uniform over REASON_TOPICS
    topic_weights: dict[str, float] | None = None
    #: optional {topic: {race_label: multiplier}} tilt on reason sampling
    topic_race_tilt: dict[str, dict[str, float]] | None = None
    distractor_sentences: tuple[int, int] = (4, 8)
    #: fraction of non-switch encounters given a sub-threshold (short) note
    short_note_rate: float = 0.0
    #: fraction of non-switching patients generated without adequate follow-up
    no_followup_rate: float = 0.0
    min_note_tokens: int = 50
    start_year_range: tuple[int, int] = (2015, 2022)
    encounter_gap_days: tuple[int, int] = (45, 240)
    age_mean_switch: float = 26.0
    age_mean_no_switch: float = 29.0
    age_sd: float = 8.0

    @classmethod
    def from_file(cls, path: str | Path) -> "GeneratorConfig":
        raw = json.loads(Path(path).read_text())
        cfg = cls(**raw)
        for key in ("distractor_sentences", "start_year_range", "encounter_gap_days"):
            setattr(cfg, key, tuple(getattr(cfg, key)))
        return cfg

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _check_mixture(name: str, mixture: dict[str, float]) -> None:
    total = sum(mixture.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"{name} weights sum to {total!r}, expected 1.0")
    if any(w < 0 for w in mixture.values()):
        raise ValueError(f"{name} weights must be nonnegative")


def _weighted_choice(rng: random.Random, mixture: dict[str, float]) -> str:
    keys = list(mixture)
    return rng.choices(keys, weights=[mixture[k] for k in keys], k=1)[0]


def _pad_note(rng: random.Random, sentences: list[str], min_tokens: int) -> str:
    text = " ".join(sentences)
    while token_count(text) <= min_tokens:
        sentences.append(rng.choice(_DISTRACTORS))
        text = " ".join(sentences)
    return text


def _note_sentences(rng: random.Random, cfg: GeneratorConfig) -> list[str]:
    n = rng.randint(*cfg.distractor_sentences)
    return [rng.choice(_DISTRACTORS) for _ in range(n)]


def generate_synthetic_corpus(config: GeneratorConfig, seed: int) -> Corpus:
    """Deterministic synthetic corpus: identical (config, seed) pairs yield
    byte-identical serialized corpora."""
    if config.n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    if not 0.0 <= config.switch_rate <= 1.0:
        raise ValueError("switch_rate must be in [0, 1]")
    _check_mixture("race_mixture", config.race_mixture)
    _check_mixture("language_mixture", config.language_mixture)
    # topic weights are relative (normalized here), unlike the demographic
    # mixtures which must sum to 1
    topic_weights = config.topic_weights or {t: 1.0 for t in REASON_TOPICS}
    if any(w < 0 for w in topic_weights.values()) or sum(topic_weights.values()) <= 0:
        raise ValueError("topic_weights must be nonnegative with positive sum")
    total_tw = sum(topic_weights.values())
    topic_weights = {t: w / total_tw for t, w in topic_weights.items()}

    rng = random.Random(seed)
    patients: list[Patient] = []
    orders: list[MedicationOrder] = []
    notes: list[ClinicalNote] = []
    gold: list[GoldLabel] = []
    last_encounter: dict[str, date] = {}

    order_seq = 0
    for i in range(config.n_patients):
        pid = f"p{i:06d}"
        race = _weighted_choice(rng, config.race_mixture)
        language = _weighted_choice(rng, config.language_mixture)
        switches = rng.random() < config.switch_rate
        n_switches = 0
        if switches:
            n_switches = 1 + (1 if rng.random() < config.extra_switch_rate else 0)
        no_followup = (not switches and config.no_followup_rate > 0
                       and rng.random() < config.no_followup_rate)

        first_rx = date(rng.randint(*config.start_year_range),
                        rng.randint(1, 12), rng.randint(1, 28))
        age_mean = config.age_mean_switch if switches else config.age_mean_no_switch
        age = min(49.0, max(15.0, rng.gauss(age_mean, config.age_sd)))
        birth = first_rx - timedelta(days=round(age * 365.25))

        patients.append(Patient(
            patient_id=pid,
            birth_date=birth,
            race_ethnicity=RaceEthnicity(race),
            preferred_language=PreferredLanguage(language),
        ))

        # modality sequence: n_switches + 1 distinct modalities, then
        # possibly a repeat encounter on the final modality
        seq: list[Modality] = [rng.choice(PRESCRIBED_MODALITIES)]
        for _ in range(n_switches):
            seq.append(rng.choice([m for m in PRESCRIBED_MODALITIES
                                   if m != seq[-1]]))
        if not switches and not no_followup and rng.random() < 0.5:
            seq.append(seq[-1])  # refill encounter, same modality
        if no_followup:
            seq = seq[:1]  # single visit, lost to follow-up

        day = first_rx
        prev_drug: str | None = None
        for step, modality in enumerate(seq):
            drug = rng.choice(DRUGS[modality])
            note_id = f"n{pid[1:]}_{step}"
            is_switch = step > 0 and modality != seq[step - 1]

            sentences = _note_sentences(rng, config)
            if is_switch:
                topic = _pick_topic(rng, topic_weights, config.topic_race_tilt, race)
                reason = rng.choice(REASON_TOPICS[topic])
                pivot = (f"She has been using {prev_drug} but reports that "
                         f"{reason}. After discussion, the plan is to stop "
                         f"{prev_drug} and start {drug} today.")
                insert_at = rng.randint(0, len(sentences))
                sentences.insert(insert_at, pivot)
                text = _pad_note(rng, sentences, config.min_note_tokens)
                gold.append(GoldLabel(
                    note_id=note_id,
                    started=frozenset({modality}),
                    stopped=frozenset({seq[step - 1]}),
                    reason_text=reason,
                    reason_topic=topic,
                ))
            else:
                verb = "Continue" if step else "Start"
                sentences.insert(rng.randint(0, len(sentences)),
                                 f"{verb} {drug} as discussed.")
                # short (dropped-by-filter) notes only on non-switch patients,
                # so planted switches always survive filtering
                short = (not switches and config.short_note_rate > 0
                         and rng.random() < config.short_note_rate)
                if short:
                    text = " ".join(sentences[:2])
                else:
                    text = _pad_note(rng, sentences, config.min_note_tokens)

            notes.append(ClinicalNote.make(note_id, pid, day, text))
            orders.append(MedicationOrder(
                order_id=f"o{order_seq:07d}",
                patient_id=pid,
                encounter_date=day,
                raw_name=drug,
                note_id=note_id,
            ))
            order_seq += 1
            prev_drug = drug
            if step < len(seq) - 1:
                day = day + timedelta(days=rng.randint(*config.encounter_gap_days))

        # follow-up window after the first prescription
        if no_followup:
            last_encounter[pid] = first_rx + timedelta(days=rng.randint(0, 150))
        else:
            min_last = first_rx + timedelta(days=183 + rng.randint(7, 400))
            last_encounter[pid] = max(day, min_last)

    return Corpus(patients=patients, orders=orders, notes=notes, gold=gold,
                  last_encounter=last_encounter)


def _pick_topic(rng, weights: dict[str, float],
                tilt: dict[str, dict[str, float]] | None, race: str) -> str:
    if not tilt:
        return _weighted_choice(rng, weights)
    adjusted = {t: w * tilt.get(t, {}).get(race, 1.0) for t, w in weights.items()}
    total = sum(adjusted.values())
    return _weighted_choice(rng, {t: w / total for t, w in adjusted.items()})
