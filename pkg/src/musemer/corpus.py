"""Corpus ingestion: WAV validation, clip records, and CSV manifests.

Clips must already be mono 44.1 kHz WAV; anything else is an error rather
than an auto-fix, since silent resampling would change downstream features.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


REQUIRED_SAMPLE_RATE = 44100
REQUIRED_CHANNELS = 1
DEFAULT_DURATION_BOUNDS = (8.0, 20.0)

MANIFEST_HEADER = [
    "id", "corpus", "path", "duration_s", "sample_rate", "channels",
    "valence", "arousal",
]


class CorpusTag(Enum):
    WCMED = "WCMED"
    CCMED = "CCMED"
    SOUNDSCAPE = "SOUNDSCAPE"
    CUSTOM = "CUSTOM"


class CorpusError(Exception):
    """Base class for ingestion and manifest errors."""


class WavFormatError(CorpusError):
    """Payload is not a decodable WAV of a supported sample format."""


class SampleRateError(CorpusError):
    """Sample rate differs from the required 44100 Hz."""


class ChannelError(CorpusError):
    """Channel count differs from the required mono."""


class DurationError(CorpusError):
    """Clip duration falls outside the corpus bounds."""


class ManifestError(CorpusError):
    """Malformed manifest row, duplicate id, or out-of-range rating."""


@dataclass(frozen=True, slots=True)
class ClipRecord:
    id: str
    corpus: CorpusTag
    path: str
    duration: float
    sample_rate: int
    channels: int
    valence: float | None = None
    arousal: float | None = None

    def __post_init__(self):
        for name, value in (("valence", self.valence), ("arousal", self.arousal)):
            if value is not None and not -1.0 <= value <= 1.0:
                raise ManifestError(f"{name} {value} outside [-1, 1] for clip {self.id}")


@dataclass(frozen=True, slots=True)
class CorpusManifest:
    corpus: CorpusTag
    clips: tuple[ClipRecord, ...]
    duration_bounds: tuple[float, float] = DEFAULT_DURATION_BOUNDS

    def __post_init__(self):
        ids = [c.id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate clip ids in manifest")

    def by_id(self) -> dict[str, ClipRecord]:
        return {c.id: c for c in self.clips}


_PCM = 1
_IEEE_FLOAT = 3


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Decode a WAV file to float64 samples in [-1, 1].

    Returns (samples, sample_rate) with samples shaped (n,) for mono or
    (n, channels) otherwise. Accepts PCM 16/24/32-bit and 32-bit float.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"not a RIFF/WAVE file: {path}")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"missing fmt/data chunk: {path}")
    if len(fmt) < 16:
        raise WavFormatError(f"truncated fmt chunk: {path}")
    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)

    if tag == _PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 2**15
    elif tag == _PCM and bits == 24:
        buf = np.frombuffer(data, dtype=np.uint8)
        buf = buf[: len(buf) - len(buf) % 3].reshape(-1, 3)
        as_int = (
            buf[:, 0].astype(np.int32)
            | (buf[:, 1].astype(np.int32) << 8)
            | (buf[:, 2].astype(np.int32) << 16)
        )
        as_int = (as_int << 8) >> 8  # sign-extend
        samples = as_int.astype(np.float64) / 2**23
    elif tag == _PCM and bits == 32:
        samples = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2**31
    elif tag == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"unsupported WAV format tag={tag} bits={bits}: {path}")

    if channels > 1:
        samples = samples[: len(samples) - len(samples) % channels]
        samples = samples.reshape(-1, channels)
    return np.clip(samples, -1.0, 1.0), rate


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int,
              fmt: str = "float32") -> None:
    """Write mono or multichannel samples in [-1, 1] as a WAV file."""
    samples = np.asarray(samples)
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    if fmt == "float32":
        tag, bits = _IEEE_FLOAT, 32
        payload = samples.astype("<f4").tobytes()
    elif fmt == "int16":
        tag, bits = _PCM, 16
        payload = (np.clip(samples, -1, 1) * (2**15 - 1)).astype("<i2").tobytes()
    elif fmt == "int32":
        tag, bits = _PCM, 32
        payload = (np.clip(samples, -1, 1) * (2**31 - 1)).astype("<i4").tobytes()
    else:
        raise ValueError(f"unsupported write format: {fmt}")
    block_align = channels * bits // 8
    fmt_chunk = struct.pack(
        "<HHIIHH", tag, channels, sample_rate,
        sample_rate * block_align, block_align, bits,
    )
    body = (
        b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def ingest_clip(
    path: str | Path,
    corpus: CorpusTag,
    bounds: tuple[float, float] = DEFAULT_DURATION_BOUNDS,
    clip_id: str | None = None,
) -> ClipRecord:
    """Validate one WAV file and produce its ClipRecord."""
    samples, rate = read_wav(path)
    if rate != REQUIRED_SAMPLE_RATE:
        raise SampleRateError(f"sample rate {rate}, expected {REQUIRED_SAMPLE_RATE}: {path}")
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    if channels != REQUIRED_CHANNELS:
        raise ChannelError(f"{channels} channels, expected mono: {path}")
    duration = len(samples) / rate
    lo, hi = bounds
    if not lo <= duration <= hi:
        raise DurationError(
            f"duration {duration:.2f}s outside [{lo}, {hi}]s: {path}"
        )
    return ClipRecord(
        id=clip_id or Path(path).stem,
        corpus=corpus,
        path=str(path),
        duration=duration,
        sample_rate=rate,
        channels=channels,
    )


def clip_samples(record: ClipRecord) -> np.ndarray:
    """Re-decode an ingested clip's audio."""
    samples, _ = read_wav(record.path)
    return samples


def _fmt_opt(x: float | None) -> str:
    return "" if x is None else repr(x)


def write_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for c in manifest.clips:
            writer.writerow([
                c.id, c.corpus.value, c.path, repr(c.duration),
                c.sample_rate, c.channels, _fmt_opt(c.valence), _fmt_opt(c.arousal),
            ])


def read_manifest(
    path: str | Path,
    duration_bounds: tuple[float, float] = DEFAULT_DURATION_BOUNDS,
) -> CorpusManifest:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != MANIFEST_HEADER:
        raise ManifestError(f"bad or missing manifest header in {path}")
    clips = []
    corpus_tag = None
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestError(f"row {lineno}: expected {len(MANIFEST_HEADER)} fields")
        try:
            record = ClipRecord(
                id=row[0],
                corpus=CorpusTag(row[1]),
                path=row[2],
                duration=float(row[3]),
                sample_rate=int(row[4]),
                channels=int(row[5]),
                valence=float(row[6]) if row[6] else None,
                arousal=float(row[7]) if row[7] else None,
            )
        except (ValueError, KeyError) as exc:
            raise ManifestError(f"row {lineno}: {exc}") from exc
        clips.append(record)
        corpus_tag = corpus_tag or record.corpus
    return CorpusManifest(
        corpus=corpus_tag or CorpusTag.CUSTOM,
        clips=tuple(clips),
        duration_bounds=duration_bounds,
    )


def attach_ratings(
    manifest: CorpusManifest,
    ratings: Mapping[str, tuple[float, float]],
) -> CorpusManifest:
    """Return a manifest with (valence, arousal) set for the rated clips."""
    known = {c.id for c in manifest.clips}
    unknown = set(ratings) - known
    if unknown:
        raise ManifestError(f"ratings for unknown clip ids: {sorted(unknown)}")
    clips = []
    for c in manifest.clips:
        if c.id in ratings:
            valence, arousal = ratings[c.id]
            c = replace(c, valence=valence, arousal=arousal)
        clips.append(c)
    return replace(manifest, clips=tuple(clips))
