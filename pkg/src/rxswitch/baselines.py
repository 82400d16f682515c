"""Classical comparison stack: bag-of-words / TF-IDF features, multinomial
logistic regression, random forest, and the repeated-split learning curve
against silver labels.

"5-fold cross validation with a 70/10/20 split" is realized as five
independently reseeded 70/10/20 patient-level splits with mean +/- SD
reporting; hyperparameters are grid-searched on the validation slice of each
repeat and the training slice is subsampled for the learning curve.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .metrics import micro_f1
from .switching import Modality, SwitchEvent, primary_label
from .text import tokenize


# ---------------------------------------------------------------------------
# features


@dataclass
class Vocabulary:
    index: dict[str, int]  # term -> dense column index
    doc_freq: dict[str, int]
    n_docs: int

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class FeatureMatrix:
    matrix: sp.csr_matrix  # rows of (index, weight)
    row_ids: list[str]
    scheme: str  # "bow" | "tfidf"


class EmptyVocabularyError(ValueError):
    pass


def build_vocabulary(texts: Sequence[str], min_df: int = 2) -> Vocabulary:
    df: dict[str, int] = {}
    for text in texts:
        for term in set(tokenize(text)):
            df[term] = df.get(term, 0) + 1
    kept = sorted(t for t, d in df.items() if d >= min_df)
    if not kept:
        raise EmptyVocabularyError(
            f"no term reaches min_df={min_df} over {len(texts)} documents; "
            "lower min_df")
    return Vocabulary(index={t: i for i, t in enumerate(kept)},
                      doc_freq={t: df[t] for t in kept},
                      n_docs=len(texts))


def _idf(vocab: Vocabulary, term: str) -> float:
    # smoothed idf: ln((1 + N) / (1 + df)) + 1
    return math.log((1 + vocab.n_docs) / (1 + vocab.doc_freq[term])) + 1.0


def transform(texts: Sequence[str], vocab: Vocabulary, scheme: str,
              row_ids: Sequence[str] | None = None) -> FeatureMatrix:
    """Vectorize texts against a frozen vocabulary. TF-IDF rows are
    L2-normalized (all-zero rows stay zero); BOW weights are raw counts."""
    if scheme not in ("bow", "tfidf"):
        raise ValueError(f"unknown scheme {scheme!r}")
    data, indices, indptr = [], [], [0]
    for text in texts:
        counts: dict[int, float] = {}
        for term in tokenize(text):
            j = vocab.index.get(term)
            if j is not None:
                counts[j] = counts.get(j, 0.0) + 1.0
        if scheme == "tfidf":
            inv = {j: t for t, j in vocab.index.items()}
            counts = {j: tf * _idf(vocab, inv[j]) for j, tf in counts.items()}
            norm = math.sqrt(sum(w * w for w in counts.values()))
            if norm > 0:
                counts = {j: w / norm for j, w in counts.items()}
        for j in sorted(counts):
            indices.append(j)
            data.append(counts[j])
        indptr.append(len(indices))
    matrix = sp.csr_matrix((data, indices, indptr),
                           shape=(len(texts), len(vocab)))
    ids = list(row_ids) if row_ids is not None else [str(i) for i in range(len(texts))]
    return FeatureMatrix(matrix=matrix, row_ids=ids, scheme=scheme)


def featurize(texts: Sequence[str], scheme: str, min_df: int = 2,
              row_ids: Sequence[str] | None = None
              ) -> tuple[Vocabulary, FeatureMatrix]:
    """Fit a vocabulary on texts (the training split) and vectorize them."""
    vocab = build_vocabulary(texts, min_df=min_df)
    return vocab, transform(texts, vocab, scheme, row_ids=row_ids)


# ---------------------------------------------------------------------------
# silver labels


@dataclass(frozen=True)
class SilverLabel:
    """Weak label from structured switch data; multi-modality events reduce
    to the lexicographically smallest member, empty sets to none."""

    note_id: str
    started: Modality
    stopped: Modality


def silver_labels_from_events(events: Iterable[SwitchEvent]) -> list[SilverLabel]:
    return [SilverLabel(note_id=e.note_id,
                        started=primary_label(e.started),
                        stopped=primary_label(e.stopped))
            for e in events]


# ---------------------------------------------------------------------------
# multinomial logistic regression


@dataclass
class TrainedModel:
    kind: str  # "logreg" | "random_forest"
    labels: list[str]
    scheme: str | None = None
    hyperparameters: dict = field(default_factory=dict)
    weights: np.ndarray | None = None  # (V, K) for logreg
    bias: np.ndarray | None = None  # (K,)
    trees: list | None = None  # random forest
    final_grad_norm: float | None = None
    n_iterations: int | None = None
    objective_trace: list[float] | None = None  # per accepted step


def _as_array(features) -> np.ndarray | sp.csr_matrix:
    if isinstance(features, FeatureMatrix):
        return features.matrix
    return features


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logreg_loss(X, Y: np.ndarray, W: np.ndarray, b: np.ndarray,
                 C: float) -> tuple[float, np.ndarray]:
    Z = np.asarray(X @ W) + b
    zmax = Z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(Z - zmax).sum(axis=1)) + zmax.ravel()
    loss = float(np.sum(logsumexp - (Z * Y).sum(axis=1)))
    return loss + float((W * W).sum()) / (2.0 * C), Z


def logreg_objective(X, Y: np.ndarray, W: np.ndarray, b: np.ndarray,
                     C: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy (summed) plus (1/(2C))||W||^2 with unpenalized bias;
    returns (objective, grad_W, grad_b)."""
    loss, Z = _logreg_loss(X, Y, W, b, C)
    D = _softmax(Z) - Y
    grad_W = np.asarray(X.T @ D) + W / C
    grad_b = D.sum(axis=0)
    return loss, grad_W, grad_b


def train_logreg(features, labels: Sequence[str], C: float = 1.0,
                 max_iter: int = 5000, tol: float = 1e-6,
                 scheme: str | None = None) -> TrainedModel:
    """Full-batch gradient descent with backtracking (Armijo) line search,
    zero initialization, stopping at gradient inf-norm < tol. Deterministic."""
    X = _as_array(features)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("logistic regression needs >= 2 distinct labels")
    idx = {c: k for k, c in enumerate(classes)}
    n, V = X.shape
    K = len(classes)
    Y = np.zeros((n, K))
    for i, lab in enumerate(labels):
        Y[i, idx[lab]] = 1.0

    W = np.zeros((V, K))
    b = np.zeros(K)
    obj, gW, gb = logreg_objective(X, Y, W, b, C)
    trace = [obj]
    step = 1.0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gnorm = max(np.abs(gW).max(initial=0.0), np.abs(gb).max(initial=0.0))
        if gnorm < tol:
            break
        g2 = float((gW * gW).sum() + (gb * gb).sum())
        # backtrack from a slightly grown step so progress can re-accelerate;
        # trials evaluate the objective only, the gradient waits for the
        # accepted point
        step = min(step * 2.0, 1e6)
        accepted = True
        while True:
            W_new = W - step * gW
            b_new = b - step * gb
            obj_new, Z_new = _logreg_loss(X, Y, W_new, b_new, C)
            if obj_new <= obj - 1e-4 * step * g2:
                break
            if step < 1e-14:
                accepted = False  # no float-representable descent step left
                break
            step *= 0.5
        if not accepted:
            break
        W, b, obj = W_new, b_new, obj_new
        trace.append(obj)
        D = _softmax(Z_new) - Y
        gW = np.asarray(X.T @ D) + W / C
        gb = D.sum(axis=0)

    gnorm = max(np.abs(gW).max(initial=0.0), np.abs(gb).max(initial=0.0))
    return TrainedModel(kind="logreg", labels=classes, scheme=scheme,
                        hyperparameters={"C": C}, weights=W, bias=b,
                        final_grad_norm=float(gnorm), n_iterations=iterations,
                        objective_trace=trace)


def predict_proba_logreg(model: TrainedModel, features) -> np.ndarray:
    X = _as_array(features)
    return _softmax(np.asarray(X @ model.weights) + model.bias)


# ---------------------------------------------------------------------------
# random forest


@dataclass
class _TreeNode:
    counts: np.ndarray  # label distribution; sums to node sample count
    feature: int | None = None
    threshold: float | None = None
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


def _best_split(X: np.ndarray, y: np.ndarray, K: int,
                candidates: np.ndarray) -> tuple[int, float, float] | None:
    n = len(y)
    one_hot = np.eye(K)[y]
    total = one_hot.sum(axis=0)
    best = None  # (cost, feature, threshold)
    for f in candidates:
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        sorted_col = col[order]
        valid = sorted_col[:-1] != sorted_col[1:]
        if not valid.any():
            continue
        cum = np.cumsum(one_hot[order], axis=0)[:-1]  # left counts per cut
        n_l = np.arange(1, n, dtype=float)
        n_r = n - n_l
        right = total - cum
        gini_l = 1.0 - ((cum / n_l[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right / n_r[:, None]) ** 2).sum(axis=1)
        cost = (n_l * gini_l + n_r * gini_r) / n
        cost[~valid] = np.inf
        i = int(np.argmin(cost))  # first minimum: smallest cut index
        if best is None or cost[i] < best[0]:
            threshold = (sorted_col[i] + sorted_col[i + 1]) / 2.0
            best = (float(cost[i]), int(f), float(threshold))
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, K: int, depth: int,
               max_depth: int, n_candidates: int,
               rng: np.random.Generator) -> _TreeNode:
    counts = np.bincount(y, minlength=K).astype(float)
    node = _TreeNode(counts=counts)
    if depth >= max_depth or len(np.unique(y)) <= 1 or len(y) < 2:
        return node
    V = X.shape[1]
    candidates = np.sort(rng.choice(V, size=min(n_candidates, V), replace=False))
    split = _best_split(X, y, K, candidates)
    if split is None:
        return node
    _, f, thr = split
    mask = X[:, f] < thr
    node.feature = f
    node.threshold = thr
    node.left = _grow_tree(X[mask], y[mask], K, depth + 1, max_depth,
                           n_candidates, rng)
    node.right = _grow_tree(X[~mask], y[~mask], K, depth + 1, max_depth,
                            n_candidates, rng)
    return node


def train_random_forest(features, labels: Sequence[str], n_estimators: int = 100,
                        max_depth: int = 20, seed: int = 0,
                        scheme: str | None = None) -> TrainedModel:
    """Bootstrap-sampled trees, ceil(sqrt(V)) candidate features per split
    (without replacement), Gini impurity, leaves at max_depth or purity.
    Prediction is the majority tree vote, ties to the lexicographically
    smallest label. Deterministic given seed."""
    X = _as_array(features)
    if sp.issparse(X):
        X = np.asarray(X.todense())
    X = np.asarray(X, dtype=float)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("random forest needs >= 2 distinct labels")
    idx = {c: k for k, c in enumerate(classes)}
    y = np.array([idx[lab] for lab in labels])
    n, V = X.shape
    K = len(classes)
    n_candidates = math.ceil(math.sqrt(V))

    trees = []
    seeds = np.random.SeedSequence(seed).spawn(n_estimators)
    for t in range(n_estimators):
        rng = np.random.Generator(np.random.PCG64(seeds[t]))
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], K, 0, max_depth,
                                n_candidates, rng))
    return TrainedModel(kind="random_forest", labels=classes, scheme=scheme,
                        hyperparameters={"n_estimators": n_estimators,
                                         "max_depth": max_depth, "seed": seed},
                        trees=trees)


def _tree_predict(node: _TreeNode, row: np.ndarray) -> int:
    while not node.is_leaf:
        node = node.left if row[node.feature] < node.threshold else node.right
    return int(np.argmax(node.counts))  # argmax -> smallest index on ties


def predict(model: TrainedModel, features) -> list[str]:
    X = _as_array(features)
    if model.kind == "logreg":
        proba = predict_proba_logreg(model, features)
        return [model.labels[k] for k in np.argmax(proba, axis=1)]
    if sp.issparse(X):
        X = np.asarray(X.todense())
    X = np.asarray(X, dtype=float)
    K = len(model.labels)
    votes = np.zeros((X.shape[0], K), dtype=int)
    for tree in model.trees:
        for i in range(X.shape[0]):
            votes[i, _tree_predict(tree, X[i])] += 1
    return [model.labels[k] for k in np.argmax(votes, axis=1)]


# ---------------------------------------------------------------------------
# grids, splits, learning curve


@dataclass
class BaselineGrids:
    logreg_c: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)
    rf_n_estimators: tuple[int, ...] = (50, 100, 250, 500)
    rf_max_depth: tuple[int, ...] = (20, 50, 100)
    models: tuple[str, ...] = ("logreg", "random_forest")
    schemes: tuple[str, ...] = ("bow", "tfidf")


@dataclass(frozen=True)
class LearningCurveCell:
    task: str  # "started" | "stopped"
    model: str
    scheme: str
    fraction: float
    mean_f1: float | None
    sd_f1: float | None
    n_repeats: int  # repeats with an available score
    scores: tuple[float, ...] = ()  # raw per-repeat scores

    @property
    def median_f1(self) -> float | None:
        if not self.scores:
            return None
        return float(np.median(self.scores))

    def as_row(self) -> dict:
        return {"task": self.task, "model": self.model, "scheme": self.scheme,
                "fraction": self.fraction, "mean_f1": self.mean_f1,
                "sd_f1": self.sd_f1, "n_repeats": self.n_repeats}


@dataclass(frozen=True)
class LabeledNote:
    note_id: str
    patient_id: str
    text: str
    started: str
    stopped: str


def split_patients(patient_ids: Sequence[str], seed: int,
                   fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
                   ) -> tuple[set[str], set[str], set[str]]:
    """Deterministic patient-level 70/10/20 split (no patient in two splits)."""
    pids = sorted(set(patient_ids))
    random.Random(seed).shuffle(pids)
    n = len(pids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train = set(pids[:n_train])
    val = set(pids[n_train:n_train + n_val])
    test = set(pids[n_train + n_val:])
    return train, val, test


def _score(model: TrainedModel, X, golds: Sequence[str]) -> float:
    preds = predict(model, X)
    f1, _ = micro_f1([({g}, {p}) for g, p in zip(golds, preds)])
    return f1


def _fit(model_name: str, X, labels, params, scheme) -> TrainedModel:
    if model_name == "logreg":
        return train_logreg(X, labels, C=params["C"], scheme=scheme)
    return train_random_forest(X, labels, n_estimators=params["n_estimators"],
                               max_depth=params["max_depth"],
                               seed=params.get("seed", 0), scheme=scheme)


def _grid(model_name: str, grids: BaselineGrids) -> list[dict]:
    if model_name == "logreg":
        return [{"C": c} for c in grids.logreg_c]
    return [{"n_estimators": n, "max_depth": d}
            for n in grids.rf_n_estimators for d in grids.rf_max_depth]


def evaluate_learning_curve(
    notes: Sequence[LabeledNote],
    grids: BaselineGrids = BaselineGrids(),
    fractions: Sequence[float] = (1.0, 0.5, 0.25, 0.10, 0.05, 0.01),
    repeats: int = 5,
    seed: int = 0,
    min_df: int = 2,
    exclude_patients: set[str] | None = None,
) -> list[LearningCurveCell]:
    """Repeated-split evaluation with training-set subsampling.

    Per repeat: reseeded patient-level 70/10/20 split; grid search on
    validation micro-F1 (ties to the smallest hyperparameters); then each
    train-subsample fraction is refit (vocabulary refit on the subsample)
    and scored on the fixed test split. Cells whose subsample has < 2
    classes or an empty vocabulary are unavailable, not failures.
    """
    if exclude_patients:
        notes = [n for n in notes if n.patient_id not in exclude_patients]
    if len(notes) < 50:
        raise ValueError(f"need >= 50 labeled notes, got {len(notes)}")

    scores: dict[tuple[str, str, str, float], list[float]] = {}
    for r in range(repeats):
        train_p, val_p, test_p = split_patients([n.patient_id for n in notes],
                                                seed=seed * 1000 + r)
        train = [n for n in notes if n.patient_id in train_p]
        val = [n for n in notes if n.patient_id in val_p]
        test = [n for n in notes if n.patient_id in test_p]
        if not train or not val or not test:
            continue
        for scheme in grids.schemes:
            try:
                vocab, X_train = featurize([n.text for n in train], scheme,
                                           min_df=min_df)
            except EmptyVocabularyError:
                continue
            X_val = transform([n.text for n in val], vocab, scheme)
            X_test = transform([n.text for n in test], vocab, scheme)
            for task in ("started", "stopped"):
                y_train = [getattr(n, task) for n in train]
                y_val = [getattr(n, task) for n in val]
                y_test = [getattr(n, task) for n in test]
                if len(set(y_train)) < 2:
                    continue
                for model_name in grids.models:
                    best_params, best_f1 = None, -1.0
                    for params in _grid(model_name, grids):
                        model = _fit(model_name, X_train, y_train, params, scheme)
                        f1 = _score(model, X_val, y_val)
                        if f1 > best_f1 + 1e-12:  # ties keep earliest (smallest)
                            best_params, best_f1 = params, f1
                    sub_rng = random.Random(
                        f"{seed}:{r}:{scheme}:{task}:{model_name}")
                    for fraction in fractions:
                        k = max(1, int(round(fraction * len(train))))
                        sub = sorted(sub_rng.sample(range(len(train)), k))
                        sub_notes = [train[i] for i in sub]
                        y_sub = [getattr(n, task) for n in sub_notes]
                        key = (task, model_name, scheme, fraction)
                        if len(set(y_sub)) < 2:
                            scores.setdefault(key, [])
                            continue
                        try:
                            v_sub, X_sub = featurize([n.text for n in sub_notes],
                                                     scheme, min_df=min_df)
                        except EmptyVocabularyError:
                            scores.setdefault(key, [])
                            continue
                        X_test_sub = transform([n.text for n in test], v_sub, scheme)
                        model = _fit(model_name, X_sub, y_sub, best_params, scheme)
                        scores.setdefault(key, []).append(
                            _score(model, X_test_sub, y_test))

    cells = []
    for (task, model_name, scheme, fraction), vals in sorted(scores.items()):
        if vals:
            mean = float(np.mean(vals))
            sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        else:
            mean = sd = None
        cells.append(LearningCurveCell(task=task, model=model_name,
                                       scheme=scheme, fraction=fraction,
                                       mean_f1=mean, sd_f1=sd,
                                       n_repeats=len(vals),
                                       scores=tuple(vals)))
    return cells


def write_learning_curve(cells: Sequence[LearningCurveCell], path) -> None:
    """Delimited table: task, model, scheme, fraction, mean_f1, sd_f1, n_repeats."""
    lines = ["task\tmodel\tscheme\tfraction\tmean_f1\tsd_f1\tn_repeats"]
    for c in cells:
        mean = "" if c.mean_f1 is None else f"{c.mean_f1:.6f}"
        sd = "" if c.sd_f1 is None else f"{c.sd_f1:.6f}"
        lines.append(f"{c.task}\t{c.model}\t{c.scheme}\t{c.fraction}"
                     f"\t{mean}\t{sd}\t{c.n_repeats}")
    path.write_text("\n".join(lines) + "\n")
