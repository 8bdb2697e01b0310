"""Frame-synchronous transducer decoding: greedy and beam search with a
per-frame symbol cap, hypothesis features for confidence estimation, and
N-best JSON-lines serialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..io_utils import read_jsonl, write_jsonl
from .model import TransducerModel, Vocabulary, encode, step_posteriors

DEFAULT_MAX_SYMBOLS = 3
DEFAULT_BEAM_WIDTH = 8
DEFAULT_NBEST = 4


@dataclass(frozen=True)
class Hypothesis:
    """One decoded label sequence with the per-token features recorded at the
    moment each token was emitted.

    hyp_logp[i] is the partial-hypothesis log posterior ending at token i;
    emitted_counts[i] counts every emission so far, blanks included, with
    token i itself counted. emitted_count totals the whole utterance.
    """

    token_ids: tuple[int, ...]
    logp: float
    emit_frames: tuple[int, ...]
    wp_logp: tuple[float, ...]
    neg_entropy: tuple[float, ...]
    emitted_count: int
    hyp_logp: tuple[float, ...]
    emitted_counts: tuple[int, ...]

    def __post_init__(self):
        for name in ("token_ids", "emit_frames", "wp_logp", "neg_entropy",
                     "hyp_logp", "emitted_counts"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(self.token_ids)
        for name in ("emit_frames", "wp_logp", "neg_entropy", "hyp_logp", "emitted_counts"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"per-token field {name} length != token count {n}")
        if any(b < a for a, b in zip(self.emit_frames, self.emit_frames[1:])):
            raise ContractError("emit frames must be non-decreasing")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class NBestList:
    utt_id: str
    hyps: tuple[Hypothesis, ...]

    def __post_init__(self):
        object.__setattr__(self, "hyps", tuple(self.hyps))
        logps = [h.logp for h in self.hyps]
        if any(b > a for a, b in zip(logps, logps[1:])):
            raise ContractError("hypotheses must be sorted by descending log posterior")

    def __len__(self) -> int:
        return len(self.hyps)

    @property
    def top(self) -> Hypothesis:
        if not self.hyps:
            raise ContractError("empty N-best list")
        return self.hyps[0]


def neg_entropy(probs, blank_id: int, include_blank: bool = False) -> float:
    """sum_k p_k ln p_k over the word-piece distribution.

    By default the blank is excluded and the remaining mass renormalized, so
    the value reflects confusion among real output units only.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not include_blank:
        p = np.delete(p, blank_id)
        mass = p.sum()
        if mass <= 0.0:
            return 0.0
        p = p / mass
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(terms.sum())


def _initial_pred_state(model: TransducerModel) -> list[np.ndarray]:
    return [np.zeros(layer.hidden_dim) for layer in model.prediction]


def _pred_step(model: TransducerModel, state, token: int):
    """Advance the prediction network by one consumed label."""
    x = model.embedding[token]
    new_state = []
    for layer, h in zip(model.prediction, state):
        h = np.tanh(layer.w_in @ x + layer.w_rec @ h + layer.bias)
        new_state.append(h)
        x = h
    return new_state, x


def _log(p: float) -> float:
    with np.errstate(divide="ignore"):
        return float(np.log(p))


def greedy_decode(features, model: TransducerModel,
                  max_symbols: int = DEFAULT_MAX_SYMBOLS) -> Hypothesis:
    """Emit the argmax token at each frame until blank or the symbol cap, then
    advance; the cap's forced advance still consumes the blank probability."""
    if max_symbols < 0:
        raise ContractError("symbol cap must be >= 0")
    _, enc = encode(features, model)
    blank = model.vocab.blank_id
    pred_state = _initial_pred_state(model)
    pred_out = np.zeros(model.prediction_dim)
    tokens: list[int] = []
    frames: list[int] = []
    wp: list[float] = []
    ne: list[float] = []
    hyp_lp: list[float] = []
    counts: list[int] = []
    logp = 0.0
    emitted = 0
    for t in range(enc.shape[0]):
        symbols = 0
        while True:
            p = step_posteriors(model, enc[t], pred_out)
            k = int(np.argmax(p))
            if k == blank or symbols >= max_symbols:
                logp += _log(p[blank])
                emitted += 1
                break
            logp += _log(p[k])
            emitted += 1
            symbols += 1
            tokens.append(k)
            frames.append(t)
            wp.append(_log(p[k]))
            ne.append(neg_entropy(p, blank))
            hyp_lp.append(logp)
            counts.append(emitted)
            pred_state, pred_out = _pred_step(model, pred_state, k)
    return Hypothesis(
        token_ids=tuple(tokens), logp=logp, emit_frames=tuple(frames),
        wp_logp=tuple(wp), neg_entropy=tuple(ne), emitted_count=emitted,
        hyp_logp=tuple(hyp_lp), emitted_counts=tuple(counts),
    )


class _Beam:
    """Mutable search node; frozen into a Hypothesis at the end."""

    __slots__ = ("tokens", "logp", "pred_state", "pred_out", "frames",
                 "wp", "ne", "hyp_lp", "counts", "emitted")

    def __init__(self, tokens, logp, pred_state, pred_out, frames, wp, ne,
                 hyp_lp, counts, emitted):
        self.tokens = tokens
        self.logp = logp
        self.pred_state = pred_state
        self.pred_out = pred_out
        self.frames = frames
        self.wp = wp
        self.ne = ne
        self.hyp_lp = hyp_lp
        self.counts = counts
        self.emitted = emitted

    def advanced(self, blank_logp: float) -> "_Beam":
        return _Beam(self.tokens, self.logp + blank_logp, self.pred_state,
                     self.pred_out, self.frames, self.wp, self.ne,
                     self.hyp_lp, self.counts, self.emitted + 1)

    def emitting(self, model, k: int, t: int, token_logp: float, ne_val: float) -> "_Beam":
        state, out = _pred_step(model, self.pred_state, k)
        logp = self.logp + token_logp
        emitted = self.emitted + 1
        return _Beam(self.tokens + (k,), logp, state, out,
                     self.frames + (t,), self.wp + (token_logp,),
                     self.ne + (ne_val,), self.hyp_lp + (logp,),
                     self.counts + (emitted,), emitted)

    def freeze(self) -> Hypothesis:
        return Hypothesis(
            token_ids=self.tokens, logp=self.logp, emit_frames=self.frames,
            wp_logp=self.wp, neg_entropy=self.ne, emitted_count=self.emitted,
            hyp_logp=self.hyp_lp, emitted_counts=self.counts,
        )


def beam_search(features, model: TransducerModel, beam_width: int = DEFAULT_BEAM_WIDTH,
                n: int = DEFAULT_NBEST, max_symbols: int = DEFAULT_MAX_SYMBOLS,
                utt_id: str = "") -> NBestList:
    """Frame-synchronous beam over expand-or-blank moves.

    Hypotheses reaching the next frame are deduplicated by token sequence,
    keeping the higher-scoring alignment, so each surviving sequence is scored
    by its best single alignment. beam width 1 degenerates to greedy search.
    """
    if not beam_width >= n >= 1:
        raise ContractError(f"need beam width >= n >= 1, got {beam_width}, {n}")
    if max_symbols < 0:
        raise ContractError("symbol cap must be >= 0")
    if beam_width == 1:
        return NBestList(utt_id=utt_id, hyps=(greedy_decode(features, model, max_symbols),))
    _, enc = encode(features, model)
    blank = model.vocab.blank_id
    labels = [k for k in range(len(model.vocab)) if k != blank]
    start = _Beam(tokens=(), logp=0.0, pred_state=_initial_pred_state(model),
                  pred_out=np.zeros(model.prediction_dim), frames=(), wp=(),
                  ne=(), hyp_lp=(), counts=(), emitted=0)
    beams: dict[tuple, _Beam] = {(): start}
    for t in range(enc.shape[0]):
        frontier = list(beams.values())
        merged: dict[tuple, _Beam] = {}
        for step in range(max_symbols + 1):
            children: list[_Beam] = []
            for b in frontier:
                p = step_posteriors(model, enc[t], b.pred_out)
                with np.errstate(divide="ignore"):
                    lp = np.log(p)
                moved = b.advanced(float(lp[blank]))
                prev = merged.get(moved.tokens)
                if prev is None or moved.logp > prev.logp:
                    merged[moved.tokens] = moved
                if step < max_symbols:
                    ne_val = neg_entropy(p, blank)
                    children.extend(
                        b.emitting(model, k, t, float(lp[k]), ne_val) for k in labels
                    )
            if not children:
                break
            children.sort(key=lambda b: -b.logp)
            frontier = children[:beam_width]
        survivors = sorted(merged.values(), key=lambda b: -b.logp)
        beams = {b.tokens: b for b in survivors[:beam_width]}
    final = sorted(beams.values(), key=lambda b: -b.logp)
    return NBestList(utt_id=utt_id, hyps=tuple(b.freeze() for b in final[:n]))


# ---------------------------------------------------------------------------
# N-best serialization: one utterance per JSON line.
# ---------------------------------------------------------------------------


def hypothesis_to_dict(hyp: Hypothesis, vocab: Vocabulary) -> dict:
    return {
        "tokens": [vocab.labels[i] for i in hyp.token_ids],
        "token_ids": list(hyp.token_ids),
        "logp": hyp.logp,
        "emit_frames": list(hyp.emit_frames),
        "wp_logp": list(hyp.wp_logp),
        "neg_entropy": list(hyp.neg_entropy),
        "emitted_count": hyp.emitted_count,
        "hyp_logp": list(hyp.hyp_logp),
        "emitted_counts": list(hyp.emitted_counts),
    }


def hypothesis_from_dict(d: dict) -> Hypothesis:
    return Hypothesis(
        token_ids=tuple(d["token_ids"]), logp=float(d["logp"]),
        emit_frames=tuple(d["emit_frames"]), wp_logp=tuple(d["wp_logp"]),
        neg_entropy=tuple(d["neg_entropy"]), emitted_count=int(d["emitted_count"]),
        hyp_logp=tuple(d["hyp_logp"]), emitted_counts=tuple(d["emitted_counts"]),
    )


def nbest_to_dict(nbest: NBestList, vocab: Vocabulary) -> dict:
    return {"utt_id": nbest.utt_id,
            "hyps": [hypothesis_to_dict(h, vocab) for h in nbest.hyps]}


def nbest_from_dict(d: dict) -> NBestList:
    return NBestList(utt_id=d["utt_id"],
                     hyps=tuple(hypothesis_from_dict(h) for h in d["hyps"]))


def write_nbest_jsonl(path, nbests, vocab: Vocabulary) -> None:
    write_jsonl(path, (nbest_to_dict(nb, vocab) for nb in nbests))


def read_nbest_jsonl(path) -> list[NBestList]:
    return [nbest_from_dict(d) for d in read_jsonl(path)]
