"""Synthetic toy corpus: each phone emits noisy copies of a prototype feature
vector for a sampled duration; frames render losslessly to 16-bit audio so
segment splicing stays frame-exact; alignments are exact by construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, TokenizationError
from .io_utils import (
    atomic_write_text,
    read_json,
    read_jsonl,
    write_ctm,
    write_json,
    write_jsonl,
    write_wav,
)
from .numcore import derive_seed, make_rng
from .transducer import Vocabulary

QUANT = 4096  # feature grid step 1/QUANT; frames round-trip through int16 exactly

SILENCE_PHONE = "sil"

DEFAULT_PHONES = ("a", "b", "c", "d", "e", "f", SILENCE_PHONE)

DEFAULT_WORDS = ("ab", "cd", "ef", "abcd", "efab", "cdef", "ace", "bdf")

WORD_ORDERS = ("ascending", "descending", "random")


def spelled_lexicon(words) -> dict[str, tuple[str, ...]]:
    """Toy pronunciation rule: a word is spelled by its phones."""
    return {w: tuple(w) for w in words}


def word_to_pieces(word: str) -> tuple[str, ...]:
    """Two-character chunks; the first carries the word-start marker."""
    if not word:
        raise TokenizationError("empty word")
    chunks = [word[i:i + 2] for i in range(0, len(word), 2)]
    return ("▁" + chunks[0], *chunks[1:])


def build_vocabulary(words) -> Vocabulary:
    pieces = sorted({p for w in words for p in word_to_pieces(w)})
    return Vocabulary.from_pieces(tuple(pieces))


def tokenize_text(words, vocab: Vocabulary) -> tuple[int, ...]:
    ids = []
    for w in words:
        for piece in word_to_pieces(w):
            ids.append(vocab.id_of(piece))
    return tuple(ids)


def quantize_features(x: np.ndarray) -> np.ndarray:
    """Snap to the int16-representable grid in [-1, 1]."""
    q = np.rint(np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0) * QUANT)
    return q / QUANT


def samples_from_features(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    scaled = f * QUANT
    ints = np.rint(scaled)
    if not np.allclose(scaled, ints, atol=1e-6):
        raise DataError("features are off the quantization grid; quantize first")
    return ints.astype(np.int16).ravel()


def features_from_samples(samples: np.ndarray, feature_dim: int) -> np.ndarray:
    s = np.asarray(samples)
    if s.size % feature_dim != 0:
        raise DataError(
            f"{s.size} samples do not divide into {feature_dim}-sample frames"
        )
    return s.astype(np.float64).reshape(-1, feature_dim) / QUANT


def _frame_shift(feature_dim: int, sample_rate: int) -> Decimal:
    """Seconds per frame as an exact finite decimal, or a configuration error."""
    frac = Fraction(feature_dim, sample_rate)
    den = frac.denominator
    for p in (2, 5):
        while den % p == 0:
            den //= p
    if den != 1:
        raise ConfigurationError(
            f"frame shift {feature_dim}/{sample_rate} s has no exact decimal form"
        )
    return Decimal(frac.numerator) / Decimal(frac.denominator)


def format_seconds(value: Decimal) -> str:
    s = format(value, "f")
    return s if "." in s else s + ".0"


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    phones: tuple[str, ...] = DEFAULT_PHONES
    words: tuple[str, ...] = DEFAULT_WORDS
    lexicon: dict[str, tuple[str, ...]] = field(default_factory=dict)
    prototypes: np.ndarray | None = None
    noise: float = 0.25
    min_words: int = 2
    max_words: int = 4
    min_frames: int = 2
    max_frames: int = 5
    num_utterances: int = 40
    word_order: str = "ascending"
    silence_prob: float = 0.3
    seed: int = 0
    sample_rate: int = 256
    feature_dim: int = 8
    utt_prefix: str = "utt"
    texts: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "phones", tuple(self.phones))
        object.__setattr__(self, "words", tuple(self.words))
        if not self.lexicon:
            object.__setattr__(self, "lexicon", spelled_lexicon(self.words))
        if self.noise < 0:
            raise ConfigurationError("noise level must be >= 0")
        if SILENCE_PHONE not in self.phones:
            raise ConfigurationError(f"phone set must include {SILENCE_PHONE!r}")
        if self.word_order not in WORD_ORDERS:
            raise ConfigurationError(f"word order must be one of {WORD_ORDERS}")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigurationError("need 1 <= min_words <= max_words")
        if self.max_words > len(self.words):
            raise ConfigurationError("max_words exceeds the word list")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigurationError("need 1 <= min_frames <= max_frames")
        for w, pron in self.lexicon.items():
            bad = [p for p in pron if p not in self.phones or p == SILENCE_PHONE]
            if not pron or bad:
                raise ConfigurationError(f"bad pronunciation for {w!r}: {pron}")
        missing = [w for w in self.words if w not in self.lexicon]
        if missing:
            raise ConfigurationError(f"words without pronunciations: {missing}")
        if self.prototypes is None:
            rng = make_rng(derive_seed(self.seed, "prototypes"))
            raw = rng.uniform(-0.9, 0.9, size=(len(self.phones), self.feature_dim))
            object.__setattr__(self, "prototypes", quantize_features(raw))
        proto = np.asarray(self.prototypes, dtype=np.float64)
        object.__setattr__(self, "prototypes", proto)
        if proto.shape != (len(self.phones), self.feature_dim):
            raise ConfigurationError(
                f"prototypes shape {proto.shape} != ({len(self.phones)}, {self.feature_dim})"
            )
        for i in range(len(proto)):
            for j in range(i + 1, len(proto)):
                if np.array_equal(proto[i], proto[j]):
                    raise ConfigurationError(
                        f"prototypes for {self.phones[i]!r} and {self.phones[j]!r} coincide"
                    )
        self.frame_shift  # validates the rate/dim combination

    @property
    def frame_shift(self) -> Decimal:
        return _frame_shift(self.feature_dim, self.sample_rate)


@dataclass(frozen=True)
class CorpusMeta:
    """Everything needed to re-extract features and targets from the corpus."""

    phones: tuple[str, ...]
    words: tuple[str, ...]
    lexicon: dict[str, tuple[str, ...]]
    pieces: tuple[str, ...]
    sample_rate: int
    feature_dim: int
    noise: float
    seed: int

    @property
    def frame_shift(self) -> Decimal:
        return _frame_shift(self.feature_dim, self.sample_rate)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary.from_pieces(self.pieces)

    def phone_id(self, phone: str) -> int:
        return self.phones.index(phone)


META_FILE = "meta.json"
MANIFEST_FILE = "manifest.jsonl"
LEXICON_FILE = "lexicon.txt"
WORD_CTM_FILE = "word_alignments.ctm"
PHONE_CTM_FILE = "phone_alignments.ctm"
WAV_DIR = "wav"


def sample_text(spec: SyntheticCorpusSpec, rng) -> tuple[str, ...]:
    k = int(rng.integers(spec.min_words, spec.max_words + 1))
    idx = rng.choice(len(spec.words), size=k, replace=False)
    if spec.word_order == "ascending":
        idx = np.sort(idx)
    elif spec.word_order == "descending":
        idx = np.sort(idx)[::-1]
    return tuple(spec.words[i] for i in idx)


def render_utterance(spec: SyntheticCorpusSpec, text, rng):
    """Returns (features, word rows, phone rows); rows are (unit, start frame,
    end frame exclusive)."""
    sil_id = spec.phones.index(SILENCE_PHONE)
    plan: list[tuple[int, int]] = []  # (phone id, word position in text or -1)
    if rng.random() < spec.silence_prob:
        plan.append((sil_id, -1))
    for w, word in enumerate(text):
        for phone in spec.lexicon[word]:
            plan.append((spec.phones.index(phone), w))
        if w < len(text) - 1 and rng.random() < spec.silence_prob:
            plan.append((sil_id, -1))
    if rng.random() < spec.silence_prob:
        plan.append((sil_id, -1))

    frames = []
    phone_rows = []
    spans: dict[int, list[int]] = {}
    cursor = 0
    for phone_id, w in plan:
        dur = int(rng.integers(spec.min_frames, spec.max_frames + 1))
        block = np.repeat(spec.prototypes[phone_id][None, :], dur, axis=0)
        if spec.noise > 0:
            block = block + spec.noise * rng.normal(size=block.shape)
        frames.append(quantize_features(block))
        phone_rows.append((spec.phones[phone_id], cursor, cursor + dur))
        if w >= 0:
            if w not in spans:
                spans[w] = [cursor, cursor + dur]
            else:
                spans[w][1] = cursor + dur
        cursor += dur
    word_rows = [(text[w], spans[w][0], spans[w][1]) for w in range(len(text))]
    return np.vstack(frames), word_rows, phone_rows


def make_corpus(spec: SyntheticCorpusSpec, out_dir) -> Path:
    """Write wav/, manifest, lexicon, meta, and exact word/phone CTMs."""
    out_dir = Path(out_dir)
    (out_dir / WAV_DIR).mkdir(parents=True, exist_ok=True)
    if spec.texts is not None and len(spec.texts) != spec.num_utterances:
        raise ConfigurationError(
            f"{len(spec.texts)} texts given for {spec.num_utterances} utterances"
        )
    shift = spec.frame_shift
    manifest_rows = []
    word_lines = []
    phone_lines = []
    for i in range(spec.num_utterances):
        rng = make_rng(derive_seed(spec.seed, "utt", i))
        text = tuple(spec.texts[i]) if spec.texts is not None else sample_text(spec, rng)
        features, word_rows, phone_rows = render_utterance(spec, text, rng)
        utt_id = f"{spec.utt_prefix}{i:04d}"
        rel_path = f"{WAV_DIR}/{utt_id}.wav"
        write_wav(out_dir / rel_path, samples_from_features(features), spec.sample_rate)
        manifest_rows.append({
            "utt_id": utt_id,
            "audio_path": rel_path,
            "text": " ".join(text),
            "origin": "real",
        })
        for unit, start, end in word_rows:
            word_lines.append(_ctm_line(utt_id, start, end, unit, shift))
        for unit, start, end in phone_rows:
            phone_lines.append(_ctm_line(utt_id, start, end, unit, shift))
    write_jsonl(out_dir / MANIFEST_FILE, manifest_rows)
    write_ctm(out_dir / WORD_CTM_FILE, word_lines)
    write_ctm(out_dir / PHONE_CTM_FILE, phone_lines)
    lexicon_lines = [f"{w} {' '.join(spec.lexicon[w])}" for w in spec.words]
    atomic_write_text(out_dir / LEXICON_FILE, "".join(l + "\n" for l in lexicon_lines))
    vocab = build_vocabulary(spec.words)
    write_json(out_dir / META_FILE, {
        "phones": list(spec.phones),
        "words": list(spec.words),
        "lexicon": {w: list(p) for w, p in spec.lexicon.items()},
        "pieces": list(vocab.pieces),
        "sample_rate": spec.sample_rate,
        "feature_dim": spec.feature_dim,
        "noise": spec.noise,
        "seed": spec.seed,
    })
    return out_dir


def _ctm_line(utt_id: str, start_frame: int, end_frame: int, unit: str,
              shift: Decimal) -> str:
    start = start_frame * shift
    dur = (end_frame - start_frame) * shift
    return f"{utt_id} 1 {format_seconds(start)} {format_seconds(dur)} {unit}"


def load_corpus_meta(corpus_dir) -> CorpusMeta:
    d = read_json(Path(corpus_dir) / META_FILE)
    return CorpusMeta(
        phones=tuple(d["phones"]),
        words=tuple(d["words"]),
        lexicon={w: tuple(p) for w, p in d["lexicon"].items()},
        pieces=tuple(d["pieces"]),
        sample_rate=int(d["sample_rate"]),
        feature_dim=int(d["feature_dim"]),
        noise=float(d["noise"]),
        seed=int(d["seed"]),
    )


def load_manifest(corpus_dir) -> list[dict]:
    return read_jsonl(Path(corpus_dir) / MANIFEST_FILE)


def frame_targets_from_rows(rows, frame_shift: Decimal, num_frames: int,
                            meta: CorpusMeta) -> tuple[int, ...]:
    """Per-frame phone ids from CTM rows covering one utterance exactly."""
    targets = np.full(num_frames, -1, dtype=np.int64)
    for row in rows:
        start = row.start / frame_shift
        end = row.end / frame_shift
        if start != start.to_integral_value() or end != end.to_integral_value():
            raise DataError(f"{row.utt_id}: time {row.start}/{row.duration} not frame-aligned")
        a, b = int(start), int(end)
        if a < 0 or b > num_frames:
            raise DataError(f"{row.utt_id}: row [{a}, {b}) outside {num_frames} frames")
        targets[a:b] = meta.phone_id(row.unit)
    if np.any(targets < 0):
        raise DataError("phone rows do not cover every frame")
    return tuple(int(t) for t in targets)
