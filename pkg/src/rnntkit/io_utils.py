"""File I/O shared across the toolkit: atomic writes, JSON/JSONL, PCM WAV,
CTM segment files, and lexicon parsing."""

from __future__ import annotations

import json
import os
import tempfile
import wave
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from .errors import AudioIOError, DataFormatError, LexiconError


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory + rename, so readers and
    parallel writers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_jsonl(path, rows) -> None:
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    atomic_write_text(path, text)


def read_jsonl(path) -> list:
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}:{i + 1}: invalid JSON line: {e}") from None
    return rows


# ---------------------------------------------------------------------------
# WAV: PCM 16-bit little-endian, mono.
# ---------------------------------------------------------------------------


def write_wav(path, samples, rate: int) -> None:
    a = np.asarray(samples)
    if a.ndim != 1:
        raise AudioIOError(f"{path}: audio must be 1-d, got shape {a.shape}")
    if a.dtype != np.int16:
        if not np.issubdtype(a.dtype, np.integer):
            raise AudioIOError(f"{path}: samples must be integer PCM, got {a.dtype}")
        if a.size and (a.min() < -32768 or a.max() > 32767):
            raise AudioIOError(f"{path}: samples out of int16 range")
        a = a.astype(np.int16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(rate)
            wf.writeframes(a.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_wav(path) -> tuple[np.ndarray, int]:
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
                raise AudioIOError(
                    f"{path}: expected mono 16-bit PCM, got "
                    f"{wf.getnchannels()}ch {8 * wf.getsampwidth()}-bit"
                )
            rate = wf.getframerate()
            data = wf.readframes(wf.getnframes())
    except wave.Error as e:
        raise AudioIOError(f"{path}: {e}") from None
    return np.frombuffer(data, dtype="<i2").astype(np.int16), rate


# ---------------------------------------------------------------------------
# CTM: whitespace-separated `utt_id channel start_sec dur_sec unit` rows.
# Times are kept as Decimal so sample conversion of values like "0.10" is
# exact; binary float would misplace floor/ceil boundaries.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CtmRow:
    utt_id: str
    channel: str
    start: Decimal
    duration: Decimal
    unit: str

    @property
    def end(self) -> Decimal:
        return self.start + self.duration


def parse_ctm_line(line: str, where: str = "") -> CtmRow:
    parts = line.split()
    if len(parts) != 5:
        raise DataFormatError(f"{where}: expected 5 fields, got {len(parts)}: {line!r}")
    try:
        start, dur = Decimal(parts[2]), Decimal(parts[3])
    except ArithmeticError:
        raise DataFormatError(f"{where}: bad time fields in {line!r}") from None
    if start < 0 or dur < 0:
        raise DataFormatError(f"{where}: negative time in {line!r}")
    return CtmRow(utt_id=parts[0], channel=parts[1], start=start, duration=dur, unit=parts[4])


def read_ctm(path) -> list[CtmRow]:
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append(parse_ctm_line(line, where=f"{path}:{i + 1}"))
    return rows


def format_ctm_row(utt_id: str, start_sec: float, dur_sec: float, unit: str,
                   channel: str = "1") -> str:
    return f"{utt_id} {channel} {start_sec:.3f} {dur_sec:.3f} {unit}"


def write_ctm(path, lines) -> None:
    atomic_write_text(path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# Lexicon: `WORD ph1 ph2 ...`, one entry per line; repeated words accumulate
# alternative pronunciations in file order.
# ---------------------------------------------------------------------------


def parse_lexicon_text(text: str, where: str = "lexicon") -> dict[str, list[tuple[str, ...]]]:
    entries: dict[str, list[tuple[str, ...]]] = {}
    for i, line in enumerate(text.splitlines()):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise LexiconError(parts[0] if parts else f"{where}:{i + 1} empty entry")
        entries.setdefault(parts[0], []).append(tuple(parts[1:]))
    return entries


def read_lexicon_file(path) -> dict[str, list[tuple[str, ...]]]:
    return parse_lexicon_text(Path(path).read_text(), where=str(path))
