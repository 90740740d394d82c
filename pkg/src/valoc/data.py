"""Core records for visual-answer-localization instances and corpus I/O.

A sample pairs a per-second video feature matrix with a subtitle track,
a tokenized question, and the ground-truth answer interval in seconds.
Corpora are stored as UTF-8 JSON lines, one sample per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "FrameSpan",
    "TokenSpan",
    "Subtitle",
    "Sample",
    "TokenLayout",
    "CorpusError",
    "validate_sample",
    "token_layout",
    "concat_token_ids",
    "load_corpus",
    "save_corpus",
]


class CorpusError(ValueError):
    """Raised on unparseable or invariant-violating corpus data."""


@dataclass(frozen=True)
class FrameSpan:
    """Time interval in seconds on the continuous axis [0, duration]."""

    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"frame span start {self.start} > end {self.end}")

    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class TokenSpan:
    """Inclusive token-index interval; both ends must be subtitle tokens."""

    start_tok: int
    end_tok: int

    def __post_init__(self):
        if not (0 <= self.start_tok <= self.end_tok):
            raise ValueError(f"bad token span [{self.start_tok}, {self.end_tok}]")


@dataclass(frozen=True)
class Subtitle:
    start_sec: float
    end_sec: float
    token_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    duration_k: int
    video_features: np.ndarray  # shape (k, d_in), one row per second
    subtitles: tuple[Subtitle, ...]
    question_tokens: tuple[int, ...]
    answer_frames: FrameSpan

    def __post_init__(self):
        object.__setattr__(self, "subtitles", tuple(self.subtitles))
        object.__setattr__(self, "question_tokens", tuple(int(t) for t in self.question_tokens))
        feats = np.asarray(self.video_features, dtype=np.float64)
        feats.setflags(write=False)
        object.__setattr__(self, "video_features", feats)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.duration_k == other.duration_k
            and np.array_equal(self.video_features, other.video_features)
            and self.subtitles == other.subtitles
            and self.question_tokens == other.question_tokens
            and self.answer_frames == other.answer_frames
        )


@dataclass(frozen=True)
class TokenLayout:
    """Concatenated text layout: question tokens first, then subtitle tokens.

    ``token_to_subtitle[i]`` is the owning subtitle index, or None for a
    question token. ``subtitle_token_range`` holds one inclusive interval
    per subtitle, in order.
    """

    n: int
    token_to_subtitle: tuple[Optional[int], ...]
    subtitle_token_range: tuple[tuple[int, int], ...] = field(default_factory=tuple)


def validate_sample(s: Sample) -> list[str]:
    """Return all invariant violations for ``s`` (empty list means valid)."""
    v: list[str] = []
    k = s.duration_k
    if k < 1:
        v.append(f"duration_k must be >= 1, got {k}")
    if s.video_features.ndim != 2 or s.video_features.shape[0] != k:
        v.append(
            f"video_features must have exactly {k} rows, got shape {s.video_features.shape}"
        )
    if not np.isfinite(s.video_features).all():
        v.append("video_features contain non-finite values")
    if s.answer_frames.start < 0 or s.answer_frames.end > k:
        v.append(
            f"answer exceeds duration: [{s.answer_frames.start}, {s.answer_frames.end}] not in [0, {k}]"
        )
    prev_end = None
    for i, sub in enumerate(s.subtitles):
        if not (0 <= sub.start_sec < sub.end_sec <= k):
            v.append(
                f"subtitle {i} interval [{sub.start_sec}, {sub.end_sec}] invalid for duration {k}"
            )
        if len(sub.token_ids) == 0:
            v.append(f"subtitle {i} has no tokens")
        if prev_end is not None and sub.start_sec < prev_end:
            v.append(f"subtitles overlap: subtitle {i} starts before subtitle {i - 1} ends")
        prev_end = sub.end_sec
    return v


def token_layout(s: Sample) -> TokenLayout:
    """Layout of the concatenated text: question, then subtitles in order."""
    owner: list[Optional[int]] = [None] * len(s.question_tokens)
    ranges: list[tuple[int, int]] = []
    pos = len(s.question_tokens)
    for i, sub in enumerate(s.subtitles):
        ranges.append((pos, pos + len(sub.token_ids) - 1))
        owner.extend([i] * len(sub.token_ids))
        pos += len(sub.token_ids)
    return TokenLayout(n=pos, token_to_subtitle=tuple(owner), subtitle_token_range=tuple(ranges))


def concat_token_ids(s: Sample) -> list[int]:
    """Token ids of the concatenated text, matching token_layout order."""
    ids = list(s.question_tokens)
    for sub in s.subtitles:
        ids.extend(sub.token_ids)
    return ids


def _sample_to_record(s: Sample) -> dict:
    return {
        "id": s.id,
        "duration_k": s.duration_k,
        "video_features": [[float(x) for x in row] for row in s.video_features],
        "subtitles": [
            {
                "start_sec": float(sub.start_sec),
                "end_sec": float(sub.end_sec),
                "token_ids": list(sub.token_ids),
            }
            for sub in s.subtitles
        ],
        "question_tokens": list(s.question_tokens),
        "answer_frames": {"start": float(s.answer_frames.start), "end": float(s.answer_frames.end)},
    }


_RECORD_KEYS = {"id", "duration_k", "video_features", "subtitles", "question_tokens", "answer_frames"}


def _record_to_sample(rec: dict) -> Sample:
    missing = _RECORD_KEYS - rec.keys()
    if missing:
        raise CorpusError(f"record missing keys: {sorted(missing)}")
    try:
        answer = FrameSpan(rec["answer_frames"]["start"], rec["answer_frames"]["end"])
        subs = tuple(
            Subtitle(d["start_sec"], d["end_sec"], tuple(d["token_ids"])) for d in rec["subtitles"]
        )
        return Sample(
            id=str(rec["id"]),
            duration_k=int(rec["duration_k"]),
            video_features=np.asarray(rec["video_features"], dtype=np.float64),
            subtitles=subs,
            question_tokens=tuple(rec["question_tokens"]),
            answer_frames=answer,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"malformed record: {exc}") from exc


def save_corpus(samples: list[Sample], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(_sample_to_record(s)) + "\n")


def load_corpus(path) -> list[Sample]:
    """Load and validate a JSON-lines corpus; raises CorpusError with line numbers."""
    path = Path(path)
    samples: list[Sample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: parse error: {exc}") from exc
            try:
                sample = _record_to_sample(rec)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            violations = validate_sample(sample)
            if violations:
                raise CorpusError(f"{path}:{lineno}: invalid sample {sample.id!r}: " + "; ".join(violations))
            samples.append(sample)
    return samples
