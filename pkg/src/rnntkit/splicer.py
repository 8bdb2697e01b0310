"""Spliced-audio construction: cut word/phone segments out of an aligned
corpus, sample them uniformly per unit, and concatenate them sample-exactly
into new-domain utterances, with phone fallback for out-of-inventory words."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AudioIOError,
    ContractError,
    DataError,
    LexiconError,
    SegmentLookupError,
    UnresolvableWordError,
)
from .io_utils import (
    read_ctm,
    read_json,
    read_lexicon_file,
    read_wav,
    write_json,
    write_jsonl,
    write_wav,
)

WORD_LEVEL = "word"
PHONE_LEVEL = "phone"


@dataclass(frozen=True)
class SegmentRef:
    unit: str
    audio_path: str
    start_sample: int
    end_sample: int
    source_utt_id: str

    def __post_init__(self):
        if not 0 <= self.start_sample < self.end_sample:
            raise ContractError(
                f"segment [{self.start_sample}, {self.end_sample}) for {self.unit!r} is empty"
            )

    @property
    def num_samples(self) -> int:
        return self.end_sample - self.start_sample

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "audio_path": self.audio_path,
            "start_sample": self.start_sample,
            "end_sample": self.end_sample,
            "source_utt_id": self.source_utt_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentRef":
        return cls(unit=d["unit"], audio_path=d["audio_path"],
                   start_sample=int(d["start_sample"]), end_sample=int(d["end_sample"]),
                   source_utt_id=d["source_utt_id"])


@dataclass(frozen=True)
class SegmentInventory:
    word_map: dict[str, tuple[SegmentRef, ...]] = field(default_factory=dict)
    phone_map: dict[str, tuple[SegmentRef, ...]] = field(default_factory=dict)
    sample_rate: int = 16000

    def __post_init__(self):
        for level in (self.word_map, self.phone_map):
            for unit, refs in level.items():
                if not refs:
                    raise ContractError(f"unit {unit!r} present with no segments")

    def merged(self, other: "SegmentInventory") -> "SegmentInventory":
        if other.sample_rate != self.sample_rate:
            raise ContractError(
                f"sample rates differ: {self.sample_rate} vs {other.sample_rate}"
            )

        def join(a, b):
            out = {u: tuple(refs) for u, refs in a.items()}
            for u, refs in b.items():
                out[u] = out.get(u, ()) + tuple(refs)
            return out

        return SegmentInventory(word_map=join(self.word_map, other.word_map),
                                phone_map=join(self.phone_map, other.phone_map),
                                sample_rate=self.sample_rate)


@dataclass(frozen=True)
class Lexicon:
    """word -> pronunciations; the first pronunciation is the canonical one."""

    entries: dict[str, tuple[tuple[str, ...], ...]]

    def __post_init__(self):
        for word, prons in self.entries.items():
            if not prons or any(not p for p in prons):
                raise LexiconError(word)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def first(self, word: str) -> tuple[str, ...]:
        if word not in self.entries:
            raise LexiconError(word)
        return self.entries[word][0]

    def validate_phones(self, phone_set) -> None:
        known = set(phone_set)
        for word, prons in self.entries.items():
            for pron in prons:
                bad = [p for p in pron if p not in known]
                if bad:
                    raise LexiconError(word)

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        raw = read_lexicon_file(path)
        return cls(entries={w: tuple(prons) for w, prons in raw.items()})

    @classmethod
    def from_simple(cls, entries: dict) -> "Lexicon":
        return cls(entries={w: (tuple(p),) for w, p in entries.items()})


@dataclass(frozen=True)
class SpliceRecipe:
    text: tuple[str, ...]
    segments: tuple[SegmentRef, ...]
    rng_seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "text": list(self.text),
            "segments": [s.to_dict() for s in self.segments],
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpliceRecipe":
        return cls(text=tuple(d["text"]),
                   segments=tuple(SegmentRef.from_dict(s) for s in d["segments"]),
                   rng_seed=d.get("rng_seed"))


def build_inventory(alignment_file, audio_dir, level: str) -> SegmentInventory:
    """One SegmentRef per alignment row; start rounds down to a sample, end
    rounds up, so no audible content is truncated."""
    if level not in (WORD_LEVEL, PHONE_LEVEL):
        raise ContractError(f"level must be word or phone, got {level!r}")
    audio_dir = Path(audio_dir)
    rows = read_ctm(alignment_file)
    durations: dict[str, int] = {}
    rate: int | None = None
    segments: dict[str, list[SegmentRef]] = {}
    bad_rows: list[str] = []
    for row in rows:
        path = audio_dir / f"{row.utt_id}.wav"
        if row.utt_id not in durations:
            if not path.exists():
                raise AudioIOError(f"missing audio for {row.utt_id}: {path}")
            samples, file_rate = read_wav(path)
            if rate is None:
                rate = file_rate
            elif rate != file_rate:
                raise DataError(f"{path}: sample rate {file_rate} != inventory rate {rate}")
            durations[row.utt_id] = samples.shape[0]
        start = int(math.floor(row.start * rate))
        end = int(math.ceil(row.end * rate))
        if not 0 <= start < end <= durations[row.utt_id]:
            bad_rows.append(
                f"{row.utt_id} {row.unit} [{start}, {end}) outside {durations[row.utt_id]} samples"
            )
            continue
        segments.setdefault(row.unit, []).append(SegmentRef(
            unit=row.unit, audio_path=str(path), start_sample=start,
            end_sample=end, source_utt_id=row.utt_id,
        ))
    if bad_rows:
        raise DataError("alignment rows out of range:\n" + "\n".join(bad_rows))
    table = {u: tuple(refs) for u, refs in segments.items()}
    if level == WORD_LEVEL:
        return SegmentInventory(word_map=table, sample_rate=rate or 16000)
    return SegmentInventory(phone_map=table, sample_rate=rate or 16000)


def inventory_to_dict(inventory: SegmentInventory) -> dict:
    return {
        "format": "segment-inventory-v1",
        "sample_rate": inventory.sample_rate,
        "word_map": {u: [r.to_dict() for r in refs]
                     for u, refs in sorted(inventory.word_map.items())},
        "phone_map": {u: [r.to_dict() for r in refs]
                      for u, refs in sorted(inventory.phone_map.items())},
    }


def inventory_from_dict(d: dict) -> SegmentInventory:
    if d.get("format") != "segment-inventory-v1":
        raise DataError("unrecognized inventory format")
    return SegmentInventory(
        word_map={u: tuple(SegmentRef.from_dict(r) for r in refs)
                  for u, refs in d["word_map"].items()},
        phone_map={u: tuple(SegmentRef.from_dict(r) for r in refs)
                   for u, refs in d["phone_map"].items()},
        sample_rate=int(d["sample_rate"]),
    )


def save_inventory(inventory: SegmentInventory, path) -> None:
    write_json(path, inventory_to_dict(inventory))


def load_inventory(path) -> SegmentInventory:
    return inventory_from_dict(read_json(path))


def sample_segment(unit: str, inventory: SegmentInventory, rng,
                   level: str | None = None) -> SegmentRef:
    """Uniform pick among the unit's segments; word map first unless pinned."""
    if level == WORD_LEVEL or (level is None and unit in inventory.word_map):
        refs = inventory.word_map.get(unit)
    elif level == PHONE_LEVEL or level is None:
        refs = inventory.phone_map.get(unit)
    else:
        raise ContractError(f"level must be word or phone, got {level!r}")
    if not refs:
        raise SegmentLookupError(f"no segments for unit {unit!r}")
    return refs[int(rng.integers(len(refs)))]


class _AudioCache:
    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def slice_of(self, ref: SegmentRef) -> np.ndarray:
        if ref.audio_path not in self._store:
            samples, _ = read_wav(ref.audio_path)
            self._store[ref.audio_path] = samples
        audio = self._store[ref.audio_path]
        if ref.end_sample > audio.shape[0]:
            raise DataError(
                f"segment [{ref.start_sample}, {ref.end_sample}) exceeds "
                f"{audio.shape[0]} samples in {ref.audio_path}"
            )
        return audio[ref.start_sample:ref.end_sample]


def plan_segments(text, inventory: SegmentInventory, lexicon: Lexicon, rng):
    """Choose one word segment per in-inventory word, else one segment per
    pronunciation phone; unresolvable words abort, listing every offender."""
    chosen: list[SegmentRef] = []
    missing: list[str] = []
    for word in text:
        if word in inventory.word_map:
            chosen.append(sample_segment(word, inventory, rng, level=WORD_LEVEL))
            continue
        if word not in lexicon:
            missing.append(word)
            continue
        pron = lexicon.first(word)
        if any(p not in inventory.phone_map for p in pron):
            missing.append(word)
            continue
        for p in pron:
            chosen.append(sample_segment(p, inventory, rng, level=PHONE_LEVEL))
    if missing:
        raise UnresolvableWordError(missing)
    return chosen


def splice_utterance(text, inventory: SegmentInventory, lexicon: Lexicon, rng,
                     seed: int | None = None) -> tuple[np.ndarray, SpliceRecipe]:
    """Bit-exact concatenation of the chosen segments in text order."""
    text = tuple(text)
    segments = plan_segments(text, inventory, lexicon, rng)
    cache = _AudioCache()
    parts = [cache.slice_of(ref) for ref in segments]
    audio = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int16)
    recipe = SpliceRecipe(text=text, segments=tuple(segments), rng_seed=seed)
    return audio, recipe


def replay_splice(recipe: SpliceRecipe) -> np.ndarray:
    """Rebuild the exact audio a recipe describes."""
    cache = _AudioCache()
    parts = [cache.slice_of(ref) for ref in recipe.segments]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int16)


SPLICED_DIR = "wav_spliced"


def build_adaptation_set(texts, inventory: SegmentInventory, lexicon: Lexicon,
                         real_rows, mix_ratio: float, rng, out_dir,
                         on_unresolvable: str = "abort"):
    """Splice every text, mix in round(ratio * spliced) real rows, shuffle
    deterministically, and write out_dir/manifest.jsonl.

    real_rows must carry resolvable audio_path entries. Returns (manifest
    rows, skipped texts); skipping happens only with on_unresolvable="skip".
    """
    if mix_ratio < 0:
        raise ContractError("mix ratio must be >= 0")
    if on_unresolvable not in ("abort", "skip"):
        raise ContractError(f"on_unresolvable must be abort or skip, got {on_unresolvable!r}")
    out_dir = Path(out_dir)
    spliced_rows = []
    skipped: list[tuple[str, ...]] = []
    for i, text in enumerate(texts):
        utt_id = f"spliced{i:04d}"
        try:
            audio, recipe = splice_utterance(text, inventory, lexicon, rng, seed=None)
        except UnresolvableWordError:
            if on_unresolvable == "abort":
                raise
            skipped.append(tuple(text))
            continue
        rel_path = f"{SPLICED_DIR}/{utt_id}.wav"
        write_wav(out_dir / rel_path, audio, inventory.sample_rate)
        spliced_rows.append({
            "utt_id": utt_id,
            "audio_path": rel_path,
            "text": " ".join(text),
            "origin": "spliced",
            "recipe": recipe.to_dict(),
        })
    n_real = min(round(mix_ratio * len(spliced_rows)), len(real_rows))
    rows = list(spliced_rows)
    if n_real > 0:
        picks = rng.choice(len(real_rows), size=n_real, replace=False)
        for idx in sorted(int(i) for i in picks):
            row = dict(real_rows[idx])
            row["origin"] = "real"
            rows.append(row)
    order = rng.permutation(len(rows))
    rows = [rows[int(i)] for i in order]
    write_jsonl(out_dir / "manifest.jsonl", rows)
    return rows, skipped
