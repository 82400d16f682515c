"""Pipeline stages, artifact manifest, and the run configuration.

Each stage reads only prior stages' persisted artifacts, writes its outputs
plus a manifest entry of input/output hashes, and is skipped on rerun when
those hashes already match. The manifest's identity hash covers stage names,
input/output hashes, config digest and seed (wall times are recorded but do
not participate), so identical seeded runs are hash-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import report as report_mod
from .baselines import (
    BaselineGrids,
    LabeledNote,
    evaluate_learning_curve,
    silver_labels_from_events,
    write_learning_curve,
)
from .corpus import Corpus, dumps_record, load_corpus, save_corpus
from .extraction import (
    ExtractionResult,
    extract_switch_info,
    load_prompt_specs,
    reason_supported,
)
from .metrics import cohens_kappa, micro_f1
from .provider import ProviderConfig, build_provider
from .switching import (
    Modality,
    ModalityLexicon,
    SwitchEvent,
    detect_switches_all,
    filter_orders,
    primary_label,
    summarize_cohort,
)
from .synth import GeneratorConfig, generate_synthetic_corpus
from .topics import (
    TopicModel,
    build_topic_model,
    enrichment_scores,
    group_topics,
    load_grouping,
    subgroup_indicators,
)

STAGES = ("generate", "detect", "evaluate_prompts", "extract", "baselines",
          "topics", "enrich", "report")

#: artifacts each stage requires, as (stage to run first, relative path)
_DEPENDENCIES: dict[str, tuple[tuple[str, str], ...]] = {
    "detect": (("generate", "corpus/patients.jsonl"),),
    "evaluate_prompts": (("detect", "detect/events.jsonl"),),
    "extract": (("detect", "detect/events.jsonl"),
                ("evaluate_prompts", "prompts_eval/best_prompt.json")),
    "baselines": (("detect", "detect/events.jsonl"),
                  ("evaluate_prompts", "prompts_eval/dev_split.json")),
    "topics": (("extract", "extract/extractions.jsonl"),),
    "enrich": (("topics", "topics/topic_model.json"),
               ("detect", "detect/events.jsonl")),
}


class PipelineError(Exception):
    pass


@dataclass
class TopicsConfig:
    reduce_dim: int = 5
    min_cluster_size: int = 5
    tau: float = 1.0
    top_n: int = 10
    grouping_path: str | None = None
    embed_provider: str = "hashing"


@dataclass
class PipelineConfig:
    out_dir: str = "out"
    seed: int = 7
    corpus_dir: str | None = None  # external corpus; None = generated
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    lexicon_path: str | None = None  # None = bundled fixture
    prompt_dir: str | None = None  # None = bundled fixtures
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    dev_split_fraction: float = 0.05
    prompt_id: int | None = None  # pin the extraction prompt (skips best-of)
    grids: BaselineGrids = field(default_factory=BaselineGrids)
    learning_fractions: tuple[float, ...] = (1.0, 0.5, 0.25, 0.10, 0.05, 0.01)
    learning_repeats: int = 5
    min_note_tokens: int = 50
    min_followup_days: int = 183
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    subgroup_attribute: str = "race_ethnicity"

    def __post_init__(self):
        if not 0.0 < self.dev_split_fraction < 1.0:
            raise PipelineError("dev_split_fraction must be in (0, 1)")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text())
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        seed = raw.get("seed", 7)
        if "generator" in raw:
            raw["generator"] = GeneratorConfig(**_tupled(raw["generator"]))
        if "provider" in raw:
            prov = dict(raw["provider"])
            prov.setdefault("mock_seed", seed)
            raw["provider"] = ProviderConfig(**prov)
        else:
            raw["provider"] = ProviderConfig(mock_seed=seed)
        if "grids" in raw:
            raw["grids"] = BaselineGrids(**_tupled(raw["grids"]))
        if "topics" in raw:
            raw["topics"] = TopicsConfig(**raw["topics"])
        if "learning_fractions" in raw:
            raw["learning_fractions"] = tuple(raw["learning_fractions"])
        cfg = cls(**raw)
        for name in ("corpus_dir", "lexicon_path", "prompt_dir"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).exists():
                raise PipelineError(f"{name} does not exist: {value}")
        return cfg

    def digest(self) -> str:
        """Content hash of run-relevant settings (the output location is
        excluded: the same run into two directories is the same run)."""

        def default(o):
            if hasattr(o, "__dict__"):
                return {k: v for k, v in vars(o).items() if not k.startswith("_")}
            if isinstance(o, tuple):
                return list(o)
            return str(o)

        doc = json.loads(json.dumps(self, default=default, sort_keys=True))
        doc.pop("out_dir", None)
        blob = json.dumps(doc, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _tupled(raw: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}


# ---------------------------------------------------------------------------
# manifest


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class Manifest:
    config_digest: str
    seed: int
    stages: dict[str, dict] = field(default_factory=dict)

    def identity_hash(self) -> str:
        core = {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "stages": {
                name: {"inputs": entry["inputs"], "outputs": entry["outputs"]}
                for name, entry in sorted(self.stages.items())
            },
        }
        return hashlib.sha256(
            json.dumps(core, sort_keys=True).encode()).hexdigest()

    def save(self, path: Path) -> None:
        doc = {
            "schema": 1,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "stages": self.stages,
            "manifest_hash": self.identity_hash(),
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        doc = json.loads(path.read_text())
        return cls(config_digest=doc["config_digest"], seed=doc["seed"],
                   stages=doc["stages"])


@contextmanager
def output_lock(out_dir: Path):
    """Single writer per output directory."""
    lock = out_dir / ".lock"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"output dir is locked by another run ({lock}); remove the lock "
            "file if that run is dead")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# shared context


class StageContext:
    """Lazily loads shared inputs so stages stay independent."""

    def __init__(self, config: PipelineConfig, out_dir: Path):
        self.config = config
        self.out = out_dir
        self._corpus: Corpus | None = None
        self._lexicon: ModalityLexicon | None = None

    @property
    def corpus_dir(self) -> Path:
        if self.config.corpus_dir:
            return Path(self.config.corpus_dir)
        return self.out / "corpus"

    @property
    def lexicon_file(self) -> Path:
        if self.config.lexicon_path:
            return Path(self.config.lexicon_path)
        from .fixtures import fixture_path

        return fixture_path("lexicon.tsv")

    def corpus(self) -> Corpus:
        if self._corpus is None:
            self._corpus = load_corpus(self.corpus_dir)
        return self._corpus

    def lexicon(self) -> ModalityLexicon:
        if self._lexicon is None:
            self._lexicon = ModalityLexicon.from_file(self.lexicon_file)
        return self._lexicon

    def events(self) -> list[SwitchEvent]:
        rows = read_jsonl(self.out / "detect" / "events.jsonl")
        return [_event_from_record(r) for r in rows]

    def dev_split(self) -> dict:
        return json.loads((self.out / "prompts_eval" / "dev_split.json").read_text())

    def prompt_specs(self):
        return load_prompt_specs(self.config.prompt_dir)


def write_jsonl_records(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines()
            if line.strip()]


def _event_record(e: SwitchEvent) -> dict:
    return {
        "patient_id": e.patient_id,
        "prev_encounter_date": e.prev_encounter_date.isoformat(),
        "curr_encounter_date": e.curr_encounter_date.isoformat(),
        "stopped": sorted(m.value for m in e.stopped),
        "started": sorted(m.value for m in e.started),
        "note_id": e.note_id,
    }


def _event_from_record(rec: dict) -> SwitchEvent:
    from datetime import date

    return SwitchEvent(
        patient_id=rec["patient_id"],
        prev_encounter_date=date.fromisoformat(rec["prev_encounter_date"]),
        curr_encounter_date=date.fromisoformat(rec["curr_encounter_date"]),
        stopped=frozenset(Modality(m) for m in rec["stopped"]),
        started=frozenset(Modality(m) for m in rec["started"]),
        note_id=rec["note_id"],
    )


# ---------------------------------------------------------------------------
# stages


def stage_generate(ctx: StageContext) -> list[Path]:
    if ctx.config.corpus_dir:
        raise PipelineError(
            "config points at an external corpus_dir; the generate stage "
            "only applies to generated corpora")
    corpus = generate_synthetic_corpus(ctx.config.generator, seed=ctx.config.seed)
    save_corpus(corpus, ctx.out / "corpus")
    names = ["meta.json", "patients.jsonl", "orders.jsonl", "notes.jsonl",
             "gold.jsonl"]
    return [ctx.out / "corpus" / n for n in names
            if (ctx.out / "corpus" / n).exists()]


def stage_detect(ctx: StageContext) -> list[Path]:
    corpus = ctx.corpus()
    timelines, rep = filter_orders(corpus, ctx.lexicon(),
                                   min_tokens=ctx.config.min_note_tokens,
                                   min_followup_days=ctx.config.min_followup_days)
    events = detect_switches_all(timelines)
    summary = summarize_cohort(corpus, timelines, events)

    out = ctx.out / "detect"
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl_records(out / "events.jsonl", map(_event_record, events))
    write_jsonl_records(
        out / "timelines.jsonl",
        ({"patient_id": pid,
          "encounters": [{"date": e.date.isoformat(),
                          "modalities": sorted(m.value for m in e.modalities),
                          "note_id": e.note_id} for e in encs]}
         for pid, encs in sorted(timelines.items())))
    (out / "filter_report.json").write_text(
        json.dumps(rep.as_dict(), sort_keys=True, indent=2) + "\n")
    (out / "cohort_summary.json").write_text(json.dumps({
        "n_events": summary.n_events,
        "switch": vars(summary.switch),
        "no_switch": vars(summary.no_switch),
        "pair_matrix": summary.pair_matrix,
    }, sort_keys=True, indent=2, default=str) + "\n")

    demo_lines = ["section\tvalue\tswitch\tno_switch"]
    fmt = lambda v: "" if v is None else f"{v:.2f}"
    demo_lines.append(f"patients\tn\t{summary.switch.n}\t{summary.no_switch.n}")
    demo_lines.append(f"age\tmean\t{fmt(summary.switch.age_mean)}"
                      f"\t{fmt(summary.no_switch.age_mean)}")
    demo_lines.append(f"age\tsd\t{fmt(summary.switch.age_sd)}"
                      f"\t{fmt(summary.no_switch.age_sd)}")
    for section, attr in (("race_ethnicity", "by_race"),
                          ("preferred_language", "by_language"),
                          ("first_modality", "by_first_modality")):
        keys = sorted(set(getattr(summary.switch, attr))
                      | set(getattr(summary.no_switch, attr)))
        for key in keys:
            demo_lines.append(
                f"{section}\t{key}"
                f"\t{getattr(summary.switch, attr).get(key, 0)}"
                f"\t{getattr(summary.no_switch, attr).get(key, 0)}")
    (out / "cohort_demographics.tsv").write_text("\n".join(demo_lines) + "\n")

    mods = sorted(summary.pair_matrix)
    pair_lines = ["stopped\\started\t" + "\t".join(mods)]
    for s in mods:
        pair_lines.append(s + "\t" + "\t".join(
            str(summary.pair_matrix[s][t]) for t in mods))
    (out / "switch_pairs.tsv").write_text("\n".join(pair_lines) + "\n")

    return [out / n for n in ("events.jsonl", "timelines.jsonl",
                              "filter_report.json", "cohort_summary.json",
                              "cohort_demographics.tsv", "switch_pairs.tsv")]


def _dev_patients(events: list[SwitchEvent], fraction: float, seed: int) -> list[str]:
    pids = sorted({e.patient_id for e in events})
    rng = random.Random(f"dev:{seed}")
    rng.shuffle(pids)
    k = max(1, round(fraction * len(pids)))
    return sorted(pids[:k])


def _score_against_gold(results: list[ExtractionResult], corpus: Corpus
                        ) -> dict:
    gold = corpus.gold_by_note()
    notes = corpus.notes_by_id()
    scored = [r for r in results if r.error is None and r.note_id in gold]
    f1_started, _ = micro_f1([(set(gold[r.note_id].started), set(r.started))
                              for r in scored])
    f1_stopped, _ = micro_f1([(set(gold[r.note_id].stopped), set(r.stopped))
                              for r in scored])
    n = len(scored)
    started_mismatch = sum(r.started != gold[r.note_id].started
                           for r in scored) / n if n else None
    stopped_mismatch = sum(r.stopped != gold[r.note_id].stopped
                           for r in scored) / n if n else None
    halluc = sum(not reason_supported(notes[r.note_id].text, r.reason)
                 for r in scored) / n if n else None
    return {
        "n": n,
        "errors": sum(r.error is not None for r in results),
        "f1_started": f1_started,
        "f1_stopped": f1_stopped,
        "started_mismatch_rate": started_mismatch,
        "stopped_mismatch_rate": stopped_mismatch,
        "hallucination_flag_rate": halluc,
    }


def stage_evaluate_prompts(ctx: StageContext) -> list[Path]:
    corpus = ctx.corpus()
    events = ctx.events()
    if not events:
        raise PipelineError("no switch events; nothing to evaluate prompts on")
    dev_pids = _dev_patients(events, ctx.config.dev_split_fraction,
                             ctx.config.seed)
    dev_set = set(dev_pids)
    notes_by_id = corpus.notes_by_id()
    dev_note_ids = sorted({e.note_id for e in events
                           if e.patient_id in dev_set})
    dev_notes = [notes_by_id[nid] for nid in dev_note_ids]
    provider = build_provider(ctx.config.provider, corpus.gold_by_note())
    specs = ctx.prompt_specs()

    out = ctx.out / "prompts_eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "dev_split.json").write_text(json.dumps({
        "fraction": ctx.config.dev_split_fraction,
        "patients": dev_pids,
        "note_ids": dev_note_ids,
    }, sort_keys=True, indent=2) + "\n")
    write_jsonl_records(
        out / "dev_notes.jsonl",
        ({"note_id": n.note_id, "patient_id": n.patient_id,
          "text": n.text} for n in dev_notes))

    outputs = [out / "dev_split.json", out / "dev_notes.jsonl"]
    score_rows = []
    best = None  # (mean, prompt_id)
    for pid in sorted(specs):
        spec = specs[pid]
        results = extract_switch_info(dev_notes, spec, provider, ctx.lexicon(),
                                      max_parallel=ctx.config.provider.max_parallel)
        path = out / f"dev_extractions_p{pid}.jsonl"
        write_jsonl_records(path, (r.to_record() for r in results))
        outputs.append(path)
        scores = _score_against_gold(results, corpus)
        mean = (scores["f1_started"] + scores["f1_stopped"]) / 2.0
        score_rows.append((pid, spec.system_role, spec.output_format,
                           scores["f1_started"], scores["f1_stopped"], mean))
        if best is None or mean > best[0] + 1e-12:
            best = (mean, pid)

    table = ["prompt_id\tsystem_role\toutput_format\tf1_started\tf1_stopped\tmean"]
    for row in score_rows:
        table.append(f"{row[0]}\t{row[1]}\t{row[2]}"
                     f"\t{row[3]:.6f}\t{row[4]:.6f}\t{row[5]:.6f}")
    (out / "prompt_scores.tsv").write_text("\n".join(table) + "\n")
    (out / "best_prompt.json").write_text(json.dumps({
        "prompt_id": best[1],
        "mean_f1": best[0],
        "rule": "highest mean of started/stopped micro-F1; ties to lowest id",
    }, sort_keys=True, indent=2) + "\n")
    outputs += [out / "prompt_scores.tsv", out / "best_prompt.json"]
    return outputs


def _selected_prompt(ctx: StageContext) -> int:
    if ctx.config.prompt_id is not None:
        return ctx.config.prompt_id
    return json.loads(
        (ctx.out / "prompts_eval" / "best_prompt.json").read_text())["prompt_id"]


def stage_extract(ctx: StageContext) -> list[Path]:
    corpus = ctx.corpus()
    events = ctx.events()
    dev = set(ctx.dev_split()["patients"])
    notes_by_id = corpus.notes_by_id()
    test_note_ids = sorted({e.note_id for e in events if e.patient_id not in dev})
    notes = [notes_by_id[nid] for nid in test_note_ids]
    spec = ctx.prompt_specs()[_selected_prompt(ctx)]
    provider = build_provider(ctx.config.provider, corpus.gold_by_note())
    results = extract_switch_info(notes, spec, provider, ctx.lexicon(),
                                  max_parallel=ctx.config.provider.max_parallel)

    out = ctx.out / "extract"
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl_records(out / "extractions.jsonl",
                        (r.to_record() for r in results))
    metrics = _score_against_gold(results, corpus) if corpus.gold else {
        "n": len(results), "errors": sum(r.error is not None for r in results)}
    metrics["prompt_id"] = spec.prompt_id
    (out / "extract_metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    return [out / "extractions.jsonl", out / "extract_metrics.json"]


def stage_baselines(ctx: StageContext) -> list[Path]:
    corpus = ctx.corpus()
    events = ctx.events()
    dev = set(ctx.dev_split()["patients"])
    notes_by_id = corpus.notes_by_id()
    silver = {s.note_id: s for s in silver_labels_from_events(events)}
    labeled = [LabeledNote(note_id=nid,
                           patient_id=notes_by_id[nid].patient_id,
                           text=notes_by_id[nid].text,
                           started=silver[nid].started.value,
                           stopped=silver[nid].stopped.value)
               for nid in sorted(silver)]
    cells = evaluate_learning_curve(
        labeled, grids=ctx.config.grids,
        fractions=ctx.config.learning_fractions,
        repeats=ctx.config.learning_repeats,
        seed=ctx.config.seed, exclude_patients=dev)

    out = ctx.out / "baselines"
    out.mkdir(parents=True, exist_ok=True)
    write_learning_curve(cells, out / "learning_curve.tsv")

    # silver-vs-gold agreement on the dev notes (single-label reduction)
    kappa: dict[str, float | None] = {"n": 0}
    gold = corpus.gold_by_note()
    dev_note_ids = [nid for nid in ctx.dev_split()["note_ids"] if nid in gold]
    if dev_note_ids:
        for task in ("started", "stopped"):
            silver_labels = [getattr(silver[nid], task).value
                             for nid in dev_note_ids if nid in silver]
            gold_labels = [primary_label(getattr(gold[nid], task)).value
                           for nid in dev_note_ids if nid in silver]
            kappa[f"kappa_{task}"] = cohens_kappa(silver_labels, gold_labels)
        kappa["n"] = len(dev_note_ids)
    (out / "kappa.json").write_text(
        json.dumps(kappa, sort_keys=True, indent=2) + "\n")
    return [out / "learning_curve.tsv", out / "kappa.json"]


def stage_topics(ctx: StageContext) -> list[Path]:
    rows = read_jsonl(ctx.out / "extract" / "extractions.jsonl")
    dev_path = (ctx.out / "prompts_eval" /
                f"dev_extractions_p{_selected_prompt(ctx)}.jsonl")
    if dev_path.exists():
        rows = read_jsonl(dev_path) + rows
    results = [ExtractionResult.from_record(r) for r in rows]
    usable = [r for r in results if r.error is None]
    if len(usable) < ctx.config.topics.reduce_dim:
        raise PipelineError(f"too few extracted reasons ({len(usable)}) to "
                            "build a topic model")
    model = build_topic_model(
        [r.note_id for r in usable], [r.reason for r in usable],
        reduce_dim=ctx.config.topics.reduce_dim,
        min_cluster_size=ctx.config.topics.min_cluster_size,
        tau=ctx.config.topics.tau, top_n=ctx.config.topics.top_n,
        embed_provider=ctx.config.topics.embed_provider)
    if ctx.config.topics.grouping_path:
        grouping, _names = load_grouping(ctx.config.topics.grouping_path)
        model = group_topics(model, grouping)

    out = ctx.out / "topics"
    out.mkdir(parents=True, exist_ok=True)
    (out / "topic_model.json").write_text(
        json.dumps(model.to_record(), sort_keys=True) + "\n")
    lines = ["topic\trank\tterm\tscore"]
    for topic in model.topic_ids:
        for rank, (term, score) in enumerate(model.keywords.get(topic, []), 1):
            lines.append(f"{topic}\t{rank}\t{term}\t{score:.6f}")
    (out / "topic_keywords.tsv").write_text("\n".join(lines) + "\n")
    return [out / "topic_model.json", out / "topic_keywords.tsv"]


def stage_enrich(ctx: StageContext) -> list[Path]:
    model = TopicModel.from_record(
        json.loads((ctx.out / "topics" / "topic_model.json").read_text()))
    corpus = ctx.corpus()
    notes_by_id = corpus.notes_by_id()
    patients = corpus.patients_by_id()
    attr = ctx.config.subgroup_attribute
    values = []
    for nid in model.note_ids:
        patient = patients[notes_by_id[nid].patient_id]
        values.append(getattr(patient, attr).value)
    order = _subgroup_order(patients, attr)
    y = subgroup_indicators(values, order)
    em = enrichment_scores(model.q, y, topic_ids=model.topic_ids,
                           subgroups=order)

    out = ctx.out / "enrich"
    out.mkdir(parents=True, exist_ok=True)
    lines = ["topic\tsubgroup\ttheta\tlift\tlog2_lift"]
    for i, topic in enumerate(em.topic_ids):
        for j, sub in enumerate(em.subgroups):
            theta, lift, l2 = em.theta[i, j], em.lift[i, j], em.log2_lift[i, j]
            fmt = lambda v: "" if v != v else f"{v:.6f}"  # NaN -> blank
            lines.append(f"{topic}\t{sub}\t{fmt(theta)}\t{fmt(lift)}\t{fmt(l2)}")
    (out / "enrichment.tsv").write_text("\n".join(lines) + "\n")
    (out / "enrichment.json").write_text(json.dumps({
        "subgroup_attribute": attr,
        "topic_ids": em.topic_ids,
        "subgroups": em.subgroups,
        "n_notes": em.n_notes,
        "subgroup_counts": em.subgroup_counts,
        "theta": _matrix_list(em.theta),
        "lift": _matrix_list(em.lift),
        "log2_lift": _matrix_list(em.log2_lift),
    }, sort_keys=True, indent=2) + "\n")
    return [out / "enrichment.tsv", out / "enrichment.json"]


def _matrix_list(m) -> list[list[float | None]]:
    return [[None if v != v else float(v) for v in row] for row in m]


def _subgroup_order(patients: dict, attr: str) -> list[str]:
    sample = next(iter(patients.values()))
    enum_cls = type(getattr(sample, attr))
    return [member.value for member in enum_cls]


def stage_report(ctx: StageContext) -> list[Path]:
    return report_mod.emit_report(ctx.out)


_STAGE_FUNCS: dict[str, Callable[[StageContext], list[Path]]] = {
    "generate": stage_generate,
    "detect": stage_detect,
    "evaluate_prompts": stage_evaluate_prompts,
    "extract": stage_extract,
    "baselines": stage_baselines,
    "topics": stage_topics,
    "enrich": stage_enrich,
    "report": stage_report,
}


def _stage_inputs(stage: str, ctx: StageContext) -> dict[str, str]:
    """Current hashes of everything the stage reads."""
    paths: list[Path] = []
    if stage == "generate":
        pass
    elif stage == "detect":
        paths += sorted(ctx.corpus_dir.glob("*.jsonl"))
        paths.append(ctx.lexicon_file)
    elif stage == "evaluate_prompts":
        paths += [ctx.out / "detect" / "events.jsonl"]
        paths += sorted(ctx.corpus_dir.glob("*.jsonl"))
        prompt_dir = (Path(ctx.config.prompt_dir) if ctx.config.prompt_dir
                      else None)
        if prompt_dir is None:
            from .fixtures import fixture_path

            prompt_dir = fixture_path("prompts")
        paths += sorted(prompt_dir.glob("prompt_*.json"))
    elif stage == "extract":
        paths += [ctx.out / "detect" / "events.jsonl",
                  ctx.out / "prompts_eval" / "best_prompt.json",
                  ctx.out / "prompts_eval" / "dev_split.json"]
        paths += sorted(ctx.corpus_dir.glob("*.jsonl"))
    elif stage == "baselines":
        paths += [ctx.out / "detect" / "events.jsonl",
                  ctx.out / "prompts_eval" / "dev_split.json"]
        paths += sorted(ctx.corpus_dir.glob("*.jsonl"))
    elif stage == "topics":
        paths += [ctx.out / "extract" / "extractions.jsonl"]
        dev = ctx.out / "prompts_eval"
        if dev.exists():
            paths += sorted(dev.glob("dev_extractions_p*.jsonl"))
    elif stage == "enrich":
        paths += [ctx.out / "topics" / "topic_model.json"]
        paths += sorted(ctx.corpus_dir.glob("*.jsonl"))
    elif stage == "report":
        for rel in report_mod.REPORT_SOURCES:
            p = ctx.out / rel
            if p.exists():
                paths.append(p)
    return {str(p.relative_to(ctx.out)) if p.is_relative_to(ctx.out) else str(p):
            file_digest(p) for p in paths if p.exists()}


def _check_dependencies(stage: str, ctx: StageContext) -> None:
    for dep_stage, rel in _DEPENDENCIES.get(stage, ()):
        if stage != "detect" and not (ctx.out / rel).exists():
            raise PipelineError(
                f"stage {stage!r} needs {rel}: run stage {dep_stage!r} first")
    if stage == "detect" and not (ctx.corpus_dir / "patients.jsonl").exists():
        hint = ("point corpus_dir at an existing corpus or run stage "
                "'generate' first")
        raise PipelineError(f"stage 'detect' found no corpus: {hint}")


def run_pipeline(config: PipelineConfig, stages: list[str] | None = None,
                 out_dir: str | Path | None = None) -> Manifest:
    """Run the requested stages (pipeline order, deduplicated); returns the
    manifest. Unchanged stages (matching input and output hashes) are
    skipped."""
    requested = list(stages) if stages else list(STAGES)
    unknown = [s for s in requested if s not in STAGES]
    if unknown:
        raise PipelineError(f"unknown stages: {unknown}")
    ordered = [s for s in STAGES if s in set(requested)]

    out = Path(out_dir) if out_dir else Path(config.out_dir)
    ctx = StageContext(config, out)
    manifest_path = out / "manifest.json"
    timings_path = out / "timings.json"

    with output_lock(out):
        if manifest_path.exists():
            manifest = Manifest.load(manifest_path)
            if manifest.config_digest != config.digest() or \
                    manifest.seed != config.seed:
                manifest = Manifest(config_digest=config.digest(),
                                    seed=config.seed)
        else:
            manifest = Manifest(config_digest=config.digest(), seed=config.seed)
        timings = (json.loads(timings_path.read_text())
                   if timings_path.exists() else {})

        for stage in ordered:
            _check_dependencies(stage, ctx)
            inputs = _stage_inputs(stage, ctx)
            prior = manifest.stages.get(stage)
            if prior and prior["inputs"] == inputs and all(
                    (out / rel).exists() and file_digest(out / rel) == digest
                    for rel, digest in prior["outputs"].items()):
                continue  # no-op rerun
            start = time.monotonic()
            outputs = _STAGE_FUNCS[stage](ctx)
            wall_ms = int((time.monotonic() - start) * 1000)
            manifest.stages[stage] = {
                "inputs": inputs,
                "outputs": {str(p.relative_to(out)): file_digest(p)
                            for p in outputs},
                "wall_time_ms": wall_ms,
            }
            timings[stage] = wall_ms
            manifest.save(manifest_path)
            timings_path.write_text(
                json.dumps(timings, sort_keys=True, indent=2) + "\n")
    return manifest
