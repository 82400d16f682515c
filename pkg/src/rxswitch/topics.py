"""Reason topic modeling: embeddings (pluggable provider or local signed
feature hashing), PCA reduction to a small space, density clustering,
class-based TF-IDF keywords, manual topic grouping, and subgroup enrichment.

Reasons that carry no usable content ("none", "no specific reason
documented", ...) are pre-assigned to a reserved topic 0 before clustering.
The reduction step is PCA; a neighborhood-graph reduction (UMAP-style) is
deliberately out of scope and this substitution is called out in the README.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .density import cluster_hdbscan
from .text import tokenize

# ---------------------------------------------------------------------------
# embeddings

HASHING_DIM = 256


@dataclass
class EmbeddingSet:
    matrix: np.ndarray  # (n, D), row-aligned with the input texts
    provider: str
    normalized: bool
    #: indices of empty inputs (zero rows)
    empty_rows: tuple[int, ...] = ()


def _hash_index(token: str) -> tuple[int, float]:
    digest = hashlib.md5(token.encode()).digest()
    idx = int.from_bytes(digest[:4], "little") % HASHING_DIM
    sign = 1.0 if digest[4] & 1 else -1.0
    return idx, sign


def hashing_embed(texts: Sequence[str], dim: int = HASHING_DIM) -> EmbeddingSet:
    """Deterministic local embedder: signed feature hashing of token
    unigrams and bigrams, L2-normalized. Empty strings map to zero vectors
    and are flagged."""
    matrix = np.zeros((len(texts), dim))
    empty = []
    for i, text in enumerate(texts):
        tokens = tokenize(text)
        grams = tokens + [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]
        if not grams:
            empty.append(i)
            continue
        for gram in grams:
            j, sign = _hash_index(gram)
            matrix[i, j % dim] += sign
        norm = np.linalg.norm(matrix[i])
        if norm > 0:
            matrix[i] /= norm
        else:
            empty.append(i)
    return EmbeddingSet(matrix=matrix, provider="hashing", normalized=True,
                        empty_rows=tuple(empty))


class EmbeddingProviderError(Exception):
    pass


def remote_embed(texts: Sequence[str], endpoint: str, model: str,
                 checkpoint_path: str | Path | None = None,
                 max_attempts: int = 4, batch_size: int = 64,
                 sleep: Callable[[float], None] | None = None) -> EmbeddingSet:
    """Fetch embeddings from an HTTP endpoint ({"input": [...], "model": ...}
    -> {"data": [{"embedding": [...]}, ...]}). On unrecoverable failure a
    partial-progress checkpoint is written before raising."""
    import time as _time

    import httpx

    sleep = sleep or _time.sleep
    rows: list[list[float]] = []
    with httpx.Client(timeout=120.0) as client:
        for start in range(0, len(texts), batch_size):
            batch = list(texts[start:start + batch_size])
            last = None
            for attempt in range(max_attempts):
                if attempt:
                    sleep(2.0 ** (attempt - 1))
                try:
                    resp = client.post(endpoint,
                                       json={"input": batch, "model": model})
                    resp.raise_for_status()
                    rows.extend(item["embedding"] for item in resp.json()["data"])
                    last = None
                    break
                except (httpx.HTTPError, KeyError, ValueError) as e:
                    last = e
            if last is not None:
                if checkpoint_path is not None and rows:
                    Path(checkpoint_path).write_text(json.dumps(rows))
                raise EmbeddingProviderError(
                    f"embedding provider failed at row {len(rows)}: {last}")
    return EmbeddingSet(matrix=np.asarray(rows, dtype=float),
                        provider=f"remote:{model}", normalized=False)


def embed_texts(reasons: Sequence[str], provider: str = "hashing",
                **kwargs) -> EmbeddingSet:
    if not reasons:
        raise ValueError("no texts to embed")
    if provider == "hashing":
        return hashing_embed(reasons, dim=kwargs.get("dim", HASHING_DIM))
    return remote_embed(reasons, **kwargs)


# ---------------------------------------------------------------------------
# reduction


def reduce_pca(embeddings: EmbeddingSet | np.ndarray, d: int = 5) -> np.ndarray:
    """Mean-centered projection onto the top-d covariance eigenvectors.

    Sign convention: each component's largest-magnitude entry is positive,
    so output is reproducible bit-for-bit. Components past the data rank are
    zero-filled with a warning.
    """
    X = embeddings.matrix if isinstance(embeddings, EmbeddingSet) else embeddings
    X = np.asarray(X, dtype=float)
    n, dim = X.shape
    if n < d:
        raise ValueError(f"need at least d={d} rows, got {n}")
    Xc = X - X.mean(axis=0)
    denom = max(n - 1, 1)
    cov = (Xc.T @ Xc) / denom
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    tol = max(eigvals[0], 0.0) * 1e-10 + 1e-30
    rank = int(np.sum(eigvals > tol))
    k = min(d, rank, dim)
    components = np.zeros((dim, d))
    for j in range(k):
        v = eigvecs[:, j]
        pivot = int(np.argmax(np.abs(v)))
        components[:, j] = v if v[pivot] >= 0 else -v
    if k < d:
        warnings.warn(f"data rank {k} < requested components {d}; "
                      "remaining components zero-filled")
    return Xc @ components


# ---------------------------------------------------------------------------
# soft weights, keywords


def centroids_for(points: np.ndarray, labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(k): points[labels == k].mean(axis=0)
            for k in sorted(set(labels.tolist())) if k >= 0}


def soft_weights(points: np.ndarray, labels: np.ndarray,
                 centroids: dict[int, np.ndarray], tau: float = 1.0) -> np.ndarray:
    """q[n, k] proportional to exp(-||x_n - c_k|| / tau), normalized over
    clusters; noise rows (label -1) are all zero."""
    topic_ids = sorted(centroids)
    if not topic_ids:
        return np.zeros((len(points), 0))
    C = np.stack([centroids[k] for k in topic_ids])
    q = np.zeros((len(points), len(topic_ids)))
    clustered = labels >= 0
    if clustered.any():
        diffs = points[clustered, None, :] - C[None, :, :]
        dists = np.linalg.norm(diffs, axis=2)
        z = -dists / tau
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        q[clustered] = e / e.sum(axis=1, keepdims=True)
    return q


def ctfidf_terms(reasons: Sequence[str], labels: Sequence[int],
                 top_n: int = 10) -> dict[int, list[tuple[str, float]]]:
    """Class-based TF-IDF: score(t, c) = (count(t,c)/words(c)) *
    ln(1 + mean_words_per_class / corpus_count(t)); top_n terms per class,
    ties alphabetical. Noise documents (label -1) form no class but do count
    toward corpus-wide term frequency."""
    classes = sorted({int(l) for l in labels if l >= 0})
    if not classes:
        raise ValueError("no non-noise classes")
    class_counts: dict[int, dict[str, int]] = {c: {} for c in classes}
    class_words: dict[int, int] = {c: 0 for c in classes}
    corpus_counts: dict[str, int] = {}
    for text, label in zip(reasons, labels):
        terms = tokenize(text)
        for t in terms:
            corpus_counts[t] = corpus_counts.get(t, 0) + 1
        if label < 0:
            continue
        bucket = class_counts[int(label)]
        class_words[int(label)] += len(terms)
        for t in terms:
            bucket[t] = bucket.get(t, 0) + 1
    mean_words = sum(class_words.values()) / len(classes)

    out: dict[int, list[tuple[str, float]]] = {}
    for c in classes:
        words = class_words[c]
        scored = []
        for t, cnt in class_counts[c].items():
            if words == 0:
                continue
            score = (cnt / words) * math.log(1.0 + mean_words / corpus_counts[t])
            scored.append((t, score))
        scored.sort(key=lambda kv: (-kv[1], kv[0]))
        out[c] = scored[:top_n]
    return out


# ---------------------------------------------------------------------------
# the topic model

#: reasons treated as carrying no relevant content -> reserved topic 0
IRRELEVANT_REASONS = frozenset({
    "", "none", "n/a", "na", "not mentioned", "not specified",
    "no relevant reason", "no reason documented", "no reason given",
    "no specific reason documented", "reason for change not discussed today",
})


def is_irrelevant_reason(reason: str) -> bool:
    return reason.strip().lower().rstrip(".") in IRRELEVANT_REASONS


@dataclass
class TopicModel:
    note_ids: list[str]
    reasons: list[str]
    labels: np.ndarray  # -1 noise, 0 reserved no-reason topic, 1..K clusters
    points: np.ndarray  # reduced coordinates, row-aligned
    topic_ids: list[int]  # sorted, includes 0 when present
    centroids: dict[int, np.ndarray]
    q: np.ndarray  # (n, len(topic_ids)); rows sum to 1 unless noise
    keywords: dict[int, list[tuple[str, float]]]
    grouping: dict[int, int] = field(default_factory=dict)
    stabilities: dict[int, float] = field(default_factory=dict)

    def n_topics(self) -> int:
        return len(self.topic_ids)

    def to_record(self) -> dict:
        return {
            "note_ids": self.note_ids,
            "reasons": self.reasons,
            "labels": [int(l) for l in self.labels],
            "points": [[float(x) for x in row] for row in self.points],
            "topic_ids": self.topic_ids,
            "centroids": {str(k): [float(x) for x in v]
                          for k, v in self.centroids.items()},
            "q": [[float(x) for x in row] for row in self.q],
            "keywords": {str(k): [[t, float(s)] for t, s in v]
                         for k, v in self.keywords.items()},
            "grouping": {str(k): v for k, v in self.grouping.items()},
            "stabilities": {str(k): float(v) for k, v in self.stabilities.items()},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TopicModel":
        return cls(
            note_ids=list(rec["note_ids"]),
            reasons=list(rec["reasons"]),
            labels=np.asarray(rec["labels"], dtype=int),
            points=np.asarray(rec["points"], dtype=float),
            topic_ids=[int(t) for t in rec["topic_ids"]],
            centroids={int(k): np.asarray(v, dtype=float)
                       for k, v in rec["centroids"].items()},
            q=np.asarray(rec["q"], dtype=float),
            keywords={int(k): [(t, float(s)) for t, s in v]
                      for k, v in rec["keywords"].items()},
            grouping={int(k): int(v) for k, v in rec["grouping"].items()},
            stabilities={int(k): float(v)
                         for k, v in rec["stabilities"].items()},
        )


def build_topic_model(note_ids: Sequence[str], reasons: Sequence[str],
                      reduce_dim: int = 5, min_cluster_size: int = 5,
                      tau: float = 1.0, top_n: int = 10,
                      embed_provider: str = "hashing",
                      **embed_kwargs) -> TopicModel:
    """End-to-end: reserve topic 0 for contentless reasons, embed, reduce,
    cluster the rest, then soft weights and keywords."""
    reasons = list(reasons)
    note_ids = list(note_ids)
    n = len(reasons)
    emb = embed_texts(reasons, provider=embed_provider, **embed_kwargs)
    points = reduce_pca(emb, d=min(reduce_dim, n))

    reserved = np.array([is_irrelevant_reason(r) for r in reasons])
    labels = np.full(n, -1, dtype=int)
    labels[reserved] = 0
    stabilities: dict[int, float] = {}
    if (~reserved).sum() > 0:
        sub_labels, sub_stab = cluster_hdbscan(points[~reserved],
                                               min_cluster_size=min_cluster_size)
        shifted = np.where(sub_labels >= 0, sub_labels + 1, -1)
        labels[~reserved] = shifted
        stabilities = {k + 1: v for k, v in sub_stab.items()}

    cents = centroids_for(points, labels)
    topic_ids = sorted(cents)
    q = _assign_q(points, labels, cents, topic_ids, tau)
    keywords = ctfidf_terms(reasons, labels, top_n=top_n) if topic_ids else {}
    return TopicModel(note_ids=note_ids, reasons=reasons, labels=labels,
                      points=points, topic_ids=topic_ids, centroids=cents,
                      q=q, keywords=keywords,
                      grouping={k: k for k in topic_ids},
                      stabilities=stabilities)


def _assign_q(points, labels, cents, topic_ids, tau) -> np.ndarray:
    """Reserved-topic notes are one-hot on topic 0; clustered notes softmax
    over the density clusters only; noise rows stay zero."""
    n = len(points)
    q = np.zeros((n, len(topic_ids)))
    col = {k: i for i, k in enumerate(topic_ids)}
    if 0 in col:
        q[labels == 0, col[0]] = 1.0
    cluster_ids = [k for k in topic_ids if k >= 1]
    if cluster_ids:
        mask = labels >= 1
        if mask.any():
            sub_cents = {i: cents[k] for i, k in enumerate(cluster_ids)}
            sub_labels = np.zeros(mask.sum(), dtype=int)
            soft = soft_weights(points[mask], sub_labels, sub_cents, tau=tau)
            for i, k in enumerate(cluster_ids):
                q[mask, col[k]] = soft[:, i]
    return q


# ---------------------------------------------------------------------------
# grouping


class GroupingError(ValueError):
    pass


def load_grouping(path: str | Path) -> tuple[dict[int, int], dict[int, str]]:
    """Grouping file: lines `raw_id<TAB>grouped_id<TAB>display_name`."""
    mapping: dict[int, int] = {}
    names: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise GroupingError(f"{path}:{lineno}: expected raw<TAB>grouped")
        raw, grouped = int(parts[0]), int(parts[1])
        mapping[raw] = grouped
        if len(parts) > 2:
            names[grouped] = parts[2]
    return mapping, names


def group_topics(model: TopicModel, grouping: dict[int, int]) -> TopicModel:
    """Merge raw topics: labels remapped, q columns summed within groups,
    keywords recomputed on the grouped labels. The grouping must cover every
    raw topic and the grouped ids must form a contiguous range."""
    missing = [k for k in model.topic_ids if k not in grouping]
    if missing:
        raise GroupingError(f"grouping map misses raw topics {missing}")
    new_ids = sorted(set(grouping[k] for k in model.topic_ids))
    if new_ids != list(range(new_ids[0], new_ids[0] + len(new_ids))):
        raise GroupingError(f"grouped ids must be contiguous, got {new_ids}")

    labels = np.array([grouping[int(l)] if l >= 0 else -1 for l in model.labels])
    col = {gid: i for i, gid in enumerate(new_ids)}
    q = np.zeros((len(model.labels), len(new_ids)))
    for i, raw in enumerate(model.topic_ids):
        q[:, col[grouping[raw]]] += model.q[:, i]
    cents = centroids_for(model.points, labels)
    keywords = ctfidf_terms(model.reasons, labels,
                            top_n=max((len(v) for v in model.keywords.values()),
                                      default=10))
    return TopicModel(note_ids=model.note_ids, reasons=model.reasons,
                      labels=labels, points=model.points, topic_ids=new_ids,
                      centroids=cents, q=q, keywords=keywords,
                      grouping=dict(grouping), stabilities={})


# ---------------------------------------------------------------------------
# enrichment


@dataclass
class EnrichmentMatrix:
    topic_ids: list[int]
    subgroups: list[str]
    theta: np.ndarray  # (K, J); NaN = unavailable
    lift: np.ndarray
    log2_lift: np.ndarray
    n_notes: int  # noise excluded
    subgroup_counts: dict[str, int]

    def cell(self, topic: int, subgroup: str) -> tuple[float, float, float]:
        i = self.topic_ids.index(topic)
        j = self.subgroups.index(subgroup)
        return (float(self.theta[i, j]), float(self.lift[i, j]),
                float(self.log2_lift[i, j]))


def enrichment_scores(q: np.ndarray, y: np.ndarray,
                      topic_ids: Sequence[int] | None = None,
                      subgroups: Sequence[str] | None = None) -> EnrichmentMatrix:
    """theta[k, j] = sum_n q[n,k] y[n,j] / (sum_n q[n,k] * sum_n y[n,j]);
    lift = N * theta with N the number of included notes; transformed score
    is signed log2(lift) so positive means over-represented.

    Noise notes (all-zero q rows) are excluded from N and every sum. Cells
    with zero topic weight or an empty subgroup are NaN (unavailable).
    """
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    if q.shape[0] != y.shape[0]:
        raise ValueError("q and y must align row-wise")
    included = q.sum(axis=1) > 0
    qi, yi = q[included], y[included]
    n = int(included.sum())
    topic_totals = qi.sum(axis=0)  # (K,)
    group_totals = yi.sum(axis=0)  # (J,)
    num = qi.T @ yi  # (K, J)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = num / (topic_totals[:, None] * group_totals[None, :])
        theta[topic_totals == 0, :] = np.nan
        theta[:, group_totals == 0] = np.nan
        lift = n * theta
        log2_lift = np.log2(lift)
    K, J = q.shape[1], y.shape[1]
    tids = list(topic_ids) if topic_ids is not None else list(range(K))
    subs = list(subgroups) if subgroups is not None else [str(j) for j in range(J)]
    counts = {s: int(c) for s, c in zip(subs, group_totals)}
    return EnrichmentMatrix(topic_ids=tids, subgroups=subs, theta=theta,
                            lift=lift, log2_lift=log2_lift, n_notes=n,
                            subgroup_counts=counts)


def subgroup_indicators(values: Sequence[str],
                        order: Sequence[str]) -> np.ndarray:
    """One-hot y matrix from per-note subgroup values in a declared order."""
    col = {s: j for j, s in enumerate(order)}
    y = np.zeros((len(values), len(order)))
    for i, v in enumerate(values):
        y[i, col[v]] = 1.0
    return y
