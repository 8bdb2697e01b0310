"""Second-pass word timing: expand the recognized words to phones, force-align
them against frame-wise phone posteriors with a Viterbi search, and score
start/end deltas against reference timings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ContractError, EvaluationError, InfeasibleAlignmentError
from .splicer import Lexicon
from .transducer import Hypothesis, PhonePosteriorgram, Vocabulary, group_pieces_into_words

MAX_BRUTEFORCE_SEGMENTATIONS = 100_000

SILENCE_PHONE = "sil"


@dataclass(frozen=True)
class PhoneSequence:
    """Pronunciation spine: phone ids in order, word spans over those
    positions, and which positions are skippable silence."""

    phone_ids: tuple[int, ...]
    word_spans: tuple[tuple[str, int, int], ...]  # (word, first pos, last pos)
    optional: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "phone_ids", tuple(self.phone_ids))
        object.__setattr__(self, "word_spans", tuple(self.word_spans))
        object.__setattr__(self, "optional", frozenset(self.optional))
        n = len(self.phone_ids)
        if any(not 0 <= p < n for p in self.optional):
            raise ContractError("optional position out of range")
        covered = []
        for word, first, last in self.word_spans:
            if not 0 <= first <= last < n:
                raise ContractError(f"span for {word!r} out of range")
            covered.extend(range(first, last + 1))
        mandatory = [p for p in range(n) if p not in self.optional]
        if covered != mandatory:
            raise ContractError("word spans must partition the non-silence phones in order")

    def __len__(self) -> int:
        return len(self.phone_ids)

    @property
    def num_mandatory(self) -> int:
        return len(self.phone_ids) - len(self.optional)


@dataclass(frozen=True)
class WordTiming:
    word: str
    start_frame: int
    end_frame: int  # inclusive
    start_sec: float
    end_sec: float


@dataclass(frozen=True)
class WordTimingResult:
    words: tuple[WordTiming, ...]
    frame_shift: float
    logp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        prev_end = -1
        for w in self.words:
            if w.start_frame > w.end_frame:
                raise ContractError(f"{w.word!r} has start after end")
            if w.start_frame <= prev_end:
                raise ContractError("word spans must be ordered and non-overlapping")
            prev_end = w.end_frame

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class TimingMetrics:
    ave_st_ms: float
    ave_et_ms: float
    pct_ws_lt_200: float
    pct_we_lt_200: float
    words: int


def expand_to_phones(words, lexicon: Lexicon, allow_optional_silence: bool,
                     phones, silence_phone: str = SILENCE_PHONE) -> PhoneSequence:
    """Concatenated first pronunciations with word spans over positions; the
    flag adds a skippable silence slot before, between, and after words.

    phones is the id table of the posteriorgram this sequence will be
    aligned against.
    """
    table = {p: i for i, p in enumerate(phones)}
    ids: list[int] = []
    spans: list[tuple[str, int, int]] = []
    optional: set[int] = set()

    def add_silence():
        if allow_optional_silence:
            if silence_phone not in table:
                raise ContractError(f"phone table lacks {silence_phone!r}")
            optional.add(len(ids))
            ids.append(table[silence_phone])

    add_silence()
    for word in words:
        pron = lexicon.first(word)
        first = len(ids)
        for p in pron:
            if p not in table:
                raise ContractError(f"phone {p!r} of {word!r} not in the phone table")
            ids.append(table[p])
        spans.append((word, first, len(ids) - 1))
        add_silence()
    return PhoneSequence(phone_ids=tuple(ids), word_spans=tuple(spans),
                         optional=frozenset(optional))


def _log_probs(pg: PhonePosteriorgram, seq: PhoneSequence) -> np.ndarray:
    num_phones = pg.probs.shape[1]
    for p in seq.phone_ids:
        if not 0 <= p < num_phones:
            raise ContractError(f"phone id {p} out of range for {num_phones} phones")
    with np.errstate(divide="ignore"):
        return np.log(pg.probs)


def _check_feasible(pg: PhonePosteriorgram, seq: PhoneSequence) -> None:
    if len(seq) == 0:
        raise ContractError("cannot align an empty phone sequence")
    if pg.num_frames < seq.num_mandatory or pg.num_frames == 0:
        raise InfeasibleAlignmentError(
            f"{pg.num_frames} frames cannot host {seq.num_mandatory} mandatory phones"
        )


def _result_from_assignment(assignment, score, seq: PhoneSequence,
                            frame_shift: float) -> WordTimingResult:
    entry: dict[int, int] = {}
    exit_: dict[int, int] = {}
    for t, pos in enumerate(assignment):
        entry.setdefault(pos, t)
        exit_[pos] = t
    words = []
    for word, first, last in seq.word_spans:
        start, end = entry[first], exit_[last]
        words.append(WordTiming(word=word, start_frame=start, end_frame=end,
                                start_sec=start * frame_shift,
                                end_sec=end * frame_shift))
    return WordTimingResult(words=tuple(words), frame_shift=frame_shift,
                            logp=score)


def viterbi_align(pg: PhonePosteriorgram, seq: PhoneSequence,
                  frame_shift: float = 1.0) -> WordTimingResult:
    """Max-log-probability monotonic segmentation.

    Each mandatory phone occupies at least one contiguous frame run; optional
    silences may occupy none. Score ties prefer the assignment whose
    frame-to-position vector is lexicographically largest, which moves every
    transition as early as possible. Scores accumulate frame by frame so the
    exhaustive oracle reproduces them bit for bit.
    """
    _check_feasible(pg, seq)
    lp = _log_probs(pg, seq)
    T, N = pg.num_frames, len(seq)
    emit = lp[:, list(seq.phone_ids)]  # (T, N) frame-vs-position scores

    # reach_back[j]: consecutive optional positions directly before j, i.e.
    # how far back a single frame-to-frame transition may originate.
    reach_back = [0] * N
    for j in range(1, N):
        r = 0
        while j - 1 - r >= 0 and (j - 1 - r) in seq.optional:
            r += 1
        reach_back[j] = r

    # dp[j] is the best (score, assignment prefix) ending at position j, or
    # None when unreachable. Tuple comparison gives the score-then-prefix
    # ordering directly.
    dp: list[tuple[float, tuple[int, ...]] | None] = [None] * N
    for j in range(N):
        dp[j] = (float(emit[0, j]), (j,))
        if j not in seq.optional:
            break  # starting any later would skip a mandatory phone
    for t in range(1, T):
        new: list[tuple[float, tuple[int, ...]] | None] = [None] * N
        for j in range(N):
            best: tuple[float, tuple[int, ...]] | None = None
            for j_prev in range(j - 1 - reach_back[j], j + 1):
                if j_prev < 0 or dp[j_prev] is None:
                    continue
                score, prefix = dp[j_prev]
                cand = (score + float(emit[t, j]), prefix + (j,))
                if best is None or cand > best:
                    best = cand
            new[j] = best
        dp = new
    final: tuple[float, tuple[int, ...]] | None = None
    for j in range(N):
        if dp[j] is None:
            continue
        if all(p in seq.optional for p in range(j + 1, N)):
            if final is None or dp[j] > final:
                final = dp[j]
    if final is None or final[0] == -math.inf:
        raise InfeasibleAlignmentError("no segmentation with nonzero probability")
    return _result_from_assignment(final[1], final[0], seq, frame_shift)


def enumerate_segmentations(num_frames: int, seq: PhoneSequence):
    """Yield every valid frame-to-position assignment tuple."""
    positions = list(range(len(seq)))
    optional = [p for p in positions if p in seq.optional]
    mandatory = [p for p in positions if p not in seq.optional]
    for k in range(len(optional) + 1):
        for extra in combinations(optional, k):
            occupied = sorted(mandatory + list(extra))
            m = len(occupied)
            if m == 0 or m > num_frames:
                continue
            # compositions of num_frames into m positive runs
            for cut in combinations(range(1, num_frames), m - 1):
                bounds = (0, *cut, num_frames)
                assignment = []
                for i, pos in enumerate(occupied):
                    assignment.extend([pos] * (bounds[i + 1] - bounds[i]))
                yield tuple(assignment)


def count_segmentations(num_frames: int, seq: PhoneSequence) -> int:
    total = 0
    n_opt = len(seq.optional)
    n_mand = seq.num_mandatory
    for k in range(n_opt + 1):
        m = n_mand + k
        if 0 < m <= num_frames:
            total += math.comb(n_opt, k) * math.comb(num_frames - 1, m - 1)
    return total


def align_bruteforce(pg: PhonePosteriorgram, seq: PhoneSequence,
                     frame_shift: float = 1.0) -> WordTimingResult:
    """Exhaustive oracle for viterbi_align: same scoring order, same
    tie-break, so results match bit for bit."""
    _check_feasible(pg, seq)
    if count_segmentations(pg.num_frames, seq) > MAX_BRUTEFORCE_SEGMENTATIONS:
        raise ContractError("too many segmentations to enumerate")
    lp = _log_probs(pg, seq)
    best: tuple[float, tuple[int, ...]] | None = None
    for assignment in enumerate_segmentations(pg.num_frames, seq):
        score = 0.0
        for t, pos in enumerate(assignment):
            score = score + float(lp[t, seq.phone_ids[pos]])
        cand = (score, assignment)
        if best is None or cand > best:
            best = cand
    if best is None or best[0] == -math.inf:
        raise InfeasibleAlignmentError("no segmentation with nonzero probability")
    return _result_from_assignment(best[1], best[0], seq, frame_shift)


def rnnt_baseline_end_times(hyp: Hypothesis, vocab: Vocabulary,
                            frame_shift: float) -> list[tuple[str, float]]:
    """First-pass word end times: the emit frame of each word's last piece
    times the frame shift. The first pass yields no start times."""
    words = group_pieces_into_words(hyp.token_ids, vocab, strict=False)
    return [(word, hyp.emit_frames[positions[-1]] * frame_shift)
            for word, positions in words]


def timing_metrics_from_pairs(hyp_triples, ref_triples) -> TimingMetrics:
    """Core metric math over (word, start_sec, end_sec) triples: mean
    absolute start/end deltas in ms and the share strictly under 200 ms."""
    hyp_triples, ref_triples = list(hyp_triples), list(ref_triples)
    hyp_words = [w for w, _, _ in hyp_triples]
    ref_words = [w for w, _, _ in ref_triples]
    if hyp_words != ref_words:
        raise EvaluationError(f"word sequences differ: {hyp_words} vs {ref_words}")
    if not hyp_words:
        raise EvaluationError("no words to score")
    st = [abs(h[1] - r[1]) * 1000.0 for h, r in zip(hyp_triples, ref_triples)]
    et = [abs(h[2] - r[2]) * 1000.0 for h, r in zip(hyp_triples, ref_triples)]
    n = len(st)
    return TimingMetrics(
        ave_st_ms=float(np.mean(st)),
        ave_et_ms=float(np.mean(et)),
        pct_ws_lt_200=100.0 * sum(1 for d in st if d < 200.0) / n,
        pct_we_lt_200=100.0 * sum(1 for d in et if d < 200.0) / n,
        words=n,
    )


def timing_metrics(hyp: WordTimingResult, ref: WordTimingResult) -> TimingMetrics:
    """Mean absolute start/end deltas in ms and the share strictly under
    200 ms, over an identical word sequence."""
    return timing_metrics_from_pairs(
        [(w.word, w.start_sec, w.end_sec) for w in hyp.words],
        [(w.word, w.start_sec, w.end_sec) for w in ref.words],
    )


def end_time_metrics(hyp_ends: list[tuple[str, float]],
                     ref: WordTimingResult) -> tuple[float, float]:
    """(mean |end delta| ms, % strictly under 200 ms) for an end-times-only
    first pass."""
    ref_pairs = [(w.word, w.end_sec) for w in ref.words]
    if [w for w, _ in hyp_ends] != [w for w, _ in ref_pairs]:
        raise EvaluationError("word sequences differ")
    if not hyp_ends:
        raise EvaluationError("no words to score")
    et = [abs(h - r) * 1000.0 for (_, h), (_, r) in zip(hyp_ends, ref_pairs)]
    return float(np.mean(et)), 100.0 * sum(1 for d in et if d < 200.0) / len(et)


def timing_result_from_rows(rows, frame_shift: float) -> WordTimingResult:
    """Build a result from (word, start frame, end frame inclusive) rows."""
    words = tuple(
        WordTiming(word=w, start_frame=s, end_frame=e,
                   start_sec=s * frame_shift, end_sec=e * frame_shift)
        for w, s, e in rows
    )
    return WordTimingResult(words=words, frame_shift=frame_shift)
