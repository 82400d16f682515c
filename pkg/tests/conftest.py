from datetime import date

import pytest

from rxswitch.corpus import (
    ClinicalNote,
    Corpus,
    MedicationOrder,
    Patient,
    PreferredLanguage,
    RaceEthnicity,
)
from rxswitch.switching import default_lexicon
from rxswitch.synth import GeneratorConfig, generate_synthetic_corpus


@pytest.fixture(scope="session")
def lexicon():
    return default_lexicon()


def make_patient(pid="p1", birth=date(1995, 4, 1)):
    return Patient(patient_id=pid, birth_date=birth,
                   race_ethnicity=RaceEthnicity.WHITE,
                   preferred_language=PreferredLanguage.ENGLISH)


def make_note(note_id, pid, day, text=None, tokens=60):
    if text is None:
        text = " ".join(f"w{i:02d} filler" for i in range(tokens // 2 + 1))
    return ClinicalNote.make(note_id, pid, day, text)


def make_order(order_id, pid, day, raw_name, note_id):
    return MedicationOrder(order_id=order_id, patient_id=pid,
                           encounter_date=day, raw_name=raw_name,
                           note_id=note_id)


def tiny_corpus():
    """One patient, two dated encounters (oral -> intravaginal), long notes."""
    p = make_patient()
    d1, d2 = date(2020, 1, 10), date(2020, 4, 20)
    notes = [make_note("n1", "p1", d1), make_note("n2", "p1", d2)]
    orders = [
        make_order("o1", "p1", d1, "Sprintec 28 tablet", "n1"),
        make_order("o2", "p1", d2, "NuvaRing 0.12-0.015 mg/24 hr", "n2"),
    ]
    return Corpus(patients=[p], orders=orders, notes=notes, gold=[],
                  last_encounter={"p1": date(2021, 1, 1)})


@pytest.fixture
def small_corpus():
    return tiny_corpus()


@pytest.fixture(scope="session")
def synthetic_corpus():
    """Shared mid-size corpus with a high switch rate (for extraction and
    baseline tests that need many switch notes)."""
    cfg = GeneratorConfig(n_patients=300, switch_rate=0.5)
    return generate_synthetic_corpus(cfg, seed=17)
