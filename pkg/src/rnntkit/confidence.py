"""Word-level confidence: per-word features pooled from the decoder's
piece-level statistics and an N-best confusion network, a small classifier
over those features, and area-under-precision-recall evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, EvaluationError, TrainingDataError
from .io_utils import read_json, write_json
from .numcore import DenseLayer, derive_seed, load_matrix, make_rng, save_matrix
from .transducer import Hypothesis, NBestList, Vocabulary, group_pieces_into_words

EPS_TOKEN = "<eps>"

WEIGHT_MODES = ("posterior", "length-normalized")

FEATURE_NAMES = (
    "avg_hyp_prob",
    "min_wp_prob",
    "avg_wp_prob",
    "min_neg_entropy",
    "avg_neg_entropy",
    "cn_prob",
    "cn_norm_prob",
)

CSV_FIELDS = ("utt_id", "word_index", "word", *FEATURE_NAMES, "label")

DEFAULT_HIDDEN_DIM = 16


@dataclass(frozen=True)
class WordFeatures:
    word: str
    avg_hyp_prob: float
    min_wp_prob: float
    avg_wp_prob: float
    min_neg_entropy: float
    avg_neg_entropy: float
    cn_prob: float
    cn_norm_prob: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES],
                        dtype=np.float64)


# ---------------------------------------------------------------------------
# edit alignment shared by the confusion network and the labeler


def edit_align(hyp, ref) -> list[tuple[int | None, int | None]]:
    """Minimum-edit-distance alignment as (hyp index, ref index) pairs; None
    marks the unpaired side. Cost ties prefer match, then substitution, then
    insertion, then deletion."""
    hyp, ref = list(hyp), list(ref)
    n, m = len(hyp), len(ref)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1])
            ins = cost[i - 1, j] + 1  # hyp word with no ref partner
            dele = cost[i, j - 1] + 1  # ref word missing from hyp
            cost[i, j] = min(sub, ins, dele)
    pairs: list[tuple[int | None, int | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]):
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            pairs.append((i - 1, None))
            i -= 1
        else:
            pairs.append((None, j - 1))
            j -= 1
    pairs.reverse()
    return pairs


def edit_distance(hyp, ref) -> int:
    pairs = edit_align(hyp, ref)
    hyp, ref = list(hyp), list(ref)
    return sum(
        1 for h, r in pairs
        if h is None or r is None or hyp[h] != ref[r]
    )


def word_error_rate(hyp_words, ref_words) -> float:
    """Edit distance over reference length."""
    ref_words = list(ref_words)
    if not ref_words:
        raise ContractError("reference must contain at least one word")
    return edit_distance(hyp_words, ref_words) / len(ref_words)


def label_words(hyp_words, ref_words) -> tuple[int, ...]:
    """1 for each hypothesis word matching its aligned reference word, else 0
    (substitutions and insertions alike)."""
    pairs = edit_align(hyp_words, ref_words)
    hyp_words, ref_words = list(hyp_words), list(ref_words)
    labels = []
    for h, r in pairs:
        if h is None:
            continue  # deletion: no hypothesis word to label
        labels.append(int(r is not None and hyp_words[h] == ref_words[r]))
    return tuple(labels)


# ---------------------------------------------------------------------------
# confusion network


@dataclass(frozen=True)
class ConfusionSlot:
    """One alignment slot; votes over words plus the empty token sum to 1."""

    votes: dict[str, float]
    pivot_index: int | None  # index into the pivot word sequence, None for gaps

    def __post_init__(self):
        total = sum(self.votes.values())
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"slot votes sum to {total}, not 1")

    def prob(self, word: str) -> float:
        return self.votes.get(word, 0.0)

    def norm_prob(self, word: str) -> float:
        real = 1.0 - self.votes.get(EPS_TOKEN, 0.0)
        return self.votes.get(word, 0.0) / real if real > 0.0 else 0.0


@dataclass(frozen=True)
class ConfusionNetwork:
    slots: tuple[ConfusionSlot, ...]
    pivot_words: tuple[str, ...]

    def pivot_slot(self, word_index: int) -> ConfusionSlot:
        for slot in self.slots:
            if slot.pivot_index == word_index:
                return slot
        raise ContractError(f"no slot for pivot word {word_index}")


def hypothesis_words(hyp: Hypothesis, vocab: Vocabulary) -> list[str]:
    return [w for w, _ in group_pieces_into_words(hyp.token_ids, vocab,
                                                  strict=False)]


def hypothesis_weights(nbest: NBestList, vocab: Vocabulary,
                       mode: str = "posterior") -> np.ndarray:
    """Relative hypothesis masses: a softmax over total log scores, or over
    per-word-normalized scores."""
    if mode not in WEIGHT_MODES:
        raise ContractError(f"weight mode must be one of {WEIGHT_MODES}")
    scores = []
    for hyp in nbest.hyps:
        s = hyp.logp
        if mode == "length-normalized":
            s = s / max(1, len(hypothesis_words(hyp, vocab)))
        scores.append(s)
    scores = np.asarray(scores, dtype=np.float64)
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def build_confusion_network(nbest: NBestList, vocab: Vocabulary,
                            mode: str = "posterior") -> ConfusionNetwork:
    """Align every hypothesis to the best one and pool word votes per slot.

    Slots follow the pivot word order; words another hypothesis inserts
    between two pivot words get gap slots where everyone else votes for the
    empty token. A hypothesis missing a pivot word votes for the empty token
    in that word's slot.
    """
    if not nbest.hyps:
        raise ContractError("cannot build a confusion network from no hypotheses")
    weights = hypothesis_weights(nbest, vocab, mode)
    pivot = hypothesis_words(nbest.top, vocab)
    word_votes: list[dict[str, float]] = [{} for _ in pivot]
    # gap_votes[g] holds sub-slots for insertions between pivot g-1 and g.
    gap_votes: list[list[dict[str, float]]] = [[] for _ in range(len(pivot) + 1)]

    def vote(table: dict[str, float], token: str, w: float) -> None:
        table[token] = table.get(token, 0.0) + w

    per_hyp_gap_fill: list[list[list[tuple[int, str]]]] = []
    for hyp, w in zip(nbest.hyps, weights):
        words = hypothesis_words(hyp, vocab)
        pairs = edit_align(words, pivot)
        matched_pivots = set()
        gap_fill: list[list[tuple[int, str]]] = [[] for _ in range(len(pivot) + 1)]
        next_gap = 0
        for h, r in pairs:
            if r is not None:
                matched_pivots.add(r)
                next_gap = r + 1
                vote(word_votes[r], words[h] if h is not None else EPS_TOKEN, float(w))
            else:
                gap_fill[next_gap].append((len(gap_fill[next_gap]), words[h]))
        for r in range(len(pivot)):
            if r not in matched_pivots:
                vote(word_votes[r], EPS_TOKEN, float(w))
        per_hyp_gap_fill.append(gap_fill)
        for g, inserts in enumerate(gap_fill):
            while len(gap_votes[g]) < len(inserts):
                gap_votes[g].append({})
    for (hyp, w), gap_fill in zip(zip(nbest.hyps, weights), per_hyp_gap_fill):
        for g, subslots in enumerate(gap_votes):
            inserts = gap_fill[g]
            for k, table in enumerate(subslots):
                token = inserts[k][1] if k < len(inserts) else EPS_TOKEN
                vote(table, token, float(w))

    slots: list[ConfusionSlot] = []
    for g in range(len(pivot) + 1):
        for table in gap_votes[g]:
            slots.append(ConfusionSlot(votes=table, pivot_index=None))
        if g < len(pivot):
            slots.append(ConfusionSlot(votes=word_votes[g], pivot_index=g))
    return ConfusionNetwork(slots=tuple(slots), pivot_words=tuple(pivot))


# ---------------------------------------------------------------------------
# per-word feature pooling


def word_features(nbest: NBestList, vocab: Vocabulary,
                  mode: str = "posterior") -> list[WordFeatures]:
    """Pool the top hypothesis's piece statistics and the confusion network
    votes into one feature row per recognized word."""
    hyp = nbest.top
    groups = group_pieces_into_words(hyp.token_ids, vocab, strict=False)
    cn = build_confusion_network(nbest, vocab, mode)
    out: list[WordFeatures] = []
    for w_idx, (word, positions) in enumerate(groups):
        if not positions:
            raise ContractError(f"word {word!r} with no pieces")
        last = positions[-1]
        if hyp.emitted_counts[last] <= 0:
            raise ContractError("emission count must be positive at a word end")
        wp = [hyp.wp_logp[p] for p in positions]
        ne = [hyp.neg_entropy[p] for p in positions]
        slot = cn.pivot_slot(w_idx)
        out.append(WordFeatures(
            word=word,
            avg_hyp_prob=hyp.hyp_logp[last] / hyp.emitted_counts[last],
            min_wp_prob=min(wp),
            avg_wp_prob=float(np.mean(wp)),
            min_neg_entropy=min(ne),
            avg_neg_entropy=float(np.mean(ne)),
            cn_prob=slot.prob(word),
            cn_norm_prob=slot.norm_prob(word),
        ))
    return out


# ---------------------------------------------------------------------------
# classifier


@dataclass(frozen=True)
class ConfidenceClassifier:
    hidden: DenseLayer
    out_weight: np.ndarray  # (1, H)
    out_bias: np.ndarray  # (1,)
    mean: np.ndarray  # (F,)
    std: np.ndarray  # (F,)

    @property
    def num_features(self) -> int:
        return self.hidden.weight.shape[1]


def _normalize(clf: ConfidenceClassifier, x: np.ndarray) -> np.ndarray:
    return (x - clf.mean) / clf.std


def predict_confidence(clf: ConfidenceClassifier, features: np.ndarray) -> np.ndarray:
    """Per-row probability that the word is correct."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise DataError("confidence features must be finite")
    if x.shape[1] != clf.num_features:
        raise DataError(f"expected {clf.num_features} features, got {x.shape[1]}")
    xn = _normalize(clf, x)
    h = np.tanh(xn @ clf.hidden.weight.T + clf.hidden.bias)
    logits = h @ clf.out_weight.T + clf.out_bias
    return 1.0 / (1.0 + np.exp(-logits[:, 0]))


def train_classifier(features: np.ndarray, labels: np.ndarray,
                     hidden_dim: int = DEFAULT_HIDDEN_DIM, epochs: int = 200,
                     lr: float = 0.1, batch_size: int = 16,
                     seed: int = 0) -> ConfidenceClassifier:
    """Two-layer network trained with minibatch gradient descent on mean
    binary cross-entropy; inputs are z-normalized with stored statistics."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise TrainingDataError(f"bad training shapes {x.shape} / {y.shape}")
    if not np.all(np.isfinite(x)):
        raise TrainingDataError("training features must be finite")
    if set(np.unique(y)) != {0.0, 1.0}:
        raise TrainingDataError("need both correct and incorrect examples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    xn = (x - mean) / std

    n, f = x.shape
    init = make_rng(derive_seed(seed, "conf-init"))
    w1 = init.uniform(-1, 1, size=(hidden_dim, f)) / np.sqrt(f)
    b1 = np.zeros(hidden_dim)
    w2 = init.uniform(-1, 1, size=(1, hidden_dim)) / np.sqrt(hidden_dim)
    b2 = np.zeros(1)

    rng = make_rng(derive_seed(seed, "conf-train"))
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = xn[idx], y[idx]
            h = np.tanh(xb @ w1.T + b1)
            logits = h @ w2.T + b2
            p = 1.0 / (1.0 + np.exp(-logits[:, 0]))
            dlogit = (p - yb) / len(idx)  # mean-BCE gradient wrt the logit
            dw2 = dlogit @ h
            db2 = dlogit.sum()
            dh = np.outer(dlogit, w2[0])
            da = dh * (1.0 - h * h)
            dw1 = da.T @ xb
            db1 = da.sum(axis=0)
            w2 = w2 - lr * dw2[None, :]
            b2 = b2 - lr * db2
            w1 = w1 - lr * dw1
            b1 = b1 - lr * db1
    return ConfidenceClassifier(hidden=DenseLayer(weight=w1, bias=b1),
                                out_weight=w2, out_bias=b2, mean=mean, std=std)


CLASSIFIER_MANIFEST = "classifier.json"


def save_classifier(clf: ConfidenceClassifier, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {
        "hidden_weight": clf.hidden.weight,
        "hidden_bias": clf.hidden.bias,
        "out_weight": clf.out_weight,
        "out_bias": clf.out_bias,
        "mean": clf.mean,
        "std": clf.std,
    }
    for name, arr in arrays.items():
        save_matrix(out_dir / f"{name}.mat", arr)
    write_json(out_dir / CLASSIFIER_MANIFEST, {
        "format": "confidence-classifier-v1",
        "num_features": clf.num_features,
        "hidden_dim": int(clf.hidden.weight.shape[0]),
        "feature_names": list(FEATURE_NAMES),
    })
    return out_dir


def load_classifier(in_dir) -> ConfidenceClassifier:
    in_dir = Path(in_dir)
    manifest = read_json(in_dir / CLASSIFIER_MANIFEST)
    if manifest.get("format") != "confidence-classifier-v1":
        raise DataError(f"unrecognized classifier manifest in {in_dir}")

    def mat(name):
        return load_matrix(in_dir / f"{name}.mat")

    return ConfidenceClassifier(
        hidden=DenseLayer(weight=mat("hidden_weight"), bias=mat("hidden_bias")[0]),
        out_weight=mat("out_weight"),
        out_bias=mat("out_bias")[0],
        mean=mat("mean")[0],
        std=mat("std")[0],
    )


# ---------------------------------------------------------------------------
# evaluation


def aupr(scores, labels) -> float:
    """Average precision with tied scores grouped into one threshold step."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1 or s.size == 0:
        raise EvaluationError(f"bad score/label shapes {s.shape} / {y.shape}")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    if set(np.unique(y)) != {0.0, 1.0}:
        raise EvaluationError("need both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    total_pos = y.sum()
    tp = 0.0
    fp = 0.0
    prev_recall = 0.0
    ap = 0.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += y[i:j].sum()
        fp += (j - i) - y[i:j].sum()
        recall = tp / total_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return float(ap)


def evaluation_report(clf: ConfidenceClassifier, features: np.ndarray,
                      labels: np.ndarray) -> dict:
    """AUPR for the correct and incorrect targets, plus each raw feature used
    alone as an incorrect-word detector."""
    y = np.asarray(labels, dtype=np.float64)
    p = predict_confidence(clf, features)
    x = np.asarray(features, dtype=np.float64)
    per_feature = {
        name: aupr(-x[:, k], 1.0 - y) for k, name in enumerate(FEATURE_NAMES)
    }
    return {
        "aupr_correct": aupr(p, y),
        "aupr_incorrect": aupr(1.0 - p, 1.0 - y),
        "per_feature": per_feature,
    }


def write_feature_csv(path, rows) -> None:
    """rows: (utt_id, word_index, WordFeatures, label)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for utt_id, word_index, feats, label in rows:
            writer.writerow([
                utt_id, word_index, feats.word,
                *(repr(float(getattr(feats, n))) for n in FEATURE_NAMES),
                int(label),
            ])


def read_feature_csv(path) -> list[tuple[str, int, WordFeatures, int]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise DataError(f"unexpected CSV header in {path}")
        for rec in reader:
            feats = WordFeatures(word=rec["word"], **{
                n: float(rec[n]) for n in FEATURE_NAMES
            })
            rows.append((rec["utt_id"], int(rec["word_index"]), feats,
                         int(rec["label"])))
    return rows
