"""Subtitle-timeline lookup table and span algebra.

The table carries, per subtitle, both its time interval and its token range
in the concatenated text, so spans can be converted between frame seconds,
subtitle indices, and token indices. Temporal IoU works on continuous
seconds; index IoU works on inclusive integer sets. They are deliberately
separate functions because mixing the units would silently corrupt the
dynamic loss weights downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

from .data import FrameSpan, Sample, TokenLayout, TokenSpan

__all__ = [
    "TableEntry",
    "TimelineTable",
    "SubtitleSpan",
    "MetricsReport",
    "build_table",
    "temporal_iou",
    "index_iou",
    "frame_to_subtitle",
    "subtitle_to_frame",
    "token_span_of_subtitles",
    "subtitle_span_of_tokens",
    "ground_truth_targets",
    "frame_buckets",
    "bucket_span_to_frames",
    "compute_metrics",
]


@dataclass(frozen=True)
class SubtitleSpan:
    """Inclusive interval of subtitle indices."""

    start_idx: int
    end_idx: int

    def __post_init__(self):
        if not (0 <= self.start_idx <= self.end_idx):
            raise ValueError(f"bad subtitle span [{self.start_idx}, {self.end_idx}]")


@dataclass(frozen=True)
class TableEntry:
    index: int
    start_sec: float
    end_sec: float
    token_start: int
    token_end: int


@dataclass(frozen=True)
class TimelineTable:
    entries: tuple[TableEntry, ...]
    duration_k: int

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class GroundTruth:
    """Supervision targets: frame buckets always, token span only with subtitles."""

    frame_start: int
    frame_end: int
    token_span: Optional[TokenSpan]


@dataclass(frozen=True)
class MetricsReport:
    iou_at: dict[float, float]  # threshold -> percentage
    miou: float
    per_sample_iou: tuple[float, ...]

    def as_flat_dict(self) -> dict[str, float]:
        out = {f"iou_{t}": self.iou_at[t] for t in sorted(self.iou_at)}
        out["miou"] = self.miou
        return out

    def csv_row(self) -> str:
        flat = self.as_flat_dict()
        return ",".join(f"{flat[k]:.6f}" for k in sorted(flat))

    @staticmethod
    def csv_header() -> str:
        return ",".join(sorted(["iou_0.3", "iou_0.5", "iou_0.7", "miou"]))


IOU_THRESHOLDS = (0.3, 0.5, 0.7)


def build_table(s: Sample, layout: TokenLayout) -> TimelineTable:
    """One entry per subtitle, carrying its time interval and token range."""
    entries = tuple(
        TableEntry(
            index=i,
            start_sec=float(sub.start_sec),
            end_sec=float(sub.end_sec),
            token_start=layout.subtitle_token_range[i][0],
            token_end=layout.subtitle_token_range[i][1],
        )
        for i, sub in enumerate(s.subtitles)
    )
    return TimelineTable(entries=entries, duration_k=s.duration_k)


def temporal_iou(a: FrameSpan, b: FrameSpan) -> float:
    """Intersection over union of two time intervals on the continuous axis.

    Identical spans score 1 even when zero-length; a zero-length union with
    differing spans scores 0.
    """
    if a.start == b.start and a.end == b.end:
        return 1.0
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length() + b.length() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def index_iou(a: Union[SubtitleSpan, TokenSpan], b: Union[SubtitleSpan, TokenSpan]) -> float:
    """Discrete IoU over inclusive integer index sets of the same kind."""
    if type(a) is not type(b):
        raise TypeError(f"index kind mismatch: {type(a).__name__} vs {type(b).__name__}")
    if isinstance(a, TokenSpan):
        a_lo, a_hi, b_lo, b_hi = a.start_tok, a.end_tok, b.start_tok, b.end_tok
    else:
        a_lo, a_hi, b_lo, b_hi = a.start_idx, a.end_idx, b.start_idx, b.end_idx
    inter = max(0, min(a_hi, b_hi) - max(a_lo, b_lo) + 1)
    union = (a_hi - a_lo + 1) + (b_hi - b_lo + 1) - inter
    return inter / union


def _argmin(values) -> int:
    best, best_i = None, 0
    for i, v in enumerate(values):
        if best is None or v < best:  # ties keep the smaller index
            best, best_i = v, i
    return best_i


def frame_to_subtitle(span: FrameSpan, tbl: TimelineTable) -> SubtitleSpan:
    """Nearest-boundary conversion of a time span to subtitle indices.

    Start maps to the subtitle whose start time is closest, end to the one
    whose end time is closest. With gapped subtitles that can come out
    inverted; then both indices fall back to the single subtitle with the
    largest time overlap (nearest midpoint if nothing overlaps), because
    conversions must always yield a valid span to serve as a target.
    """
    if not tbl.entries:
        raise ValueError("cannot convert span with an empty timeline table")
    start_idx = _argmin([abs(span.start - e.start_sec) for e in tbl.entries])
    end_idx = _argmin([abs(span.end - e.end_sec) for e in tbl.entries])
    if end_idx < start_idx:
        overlaps = [
            max(0.0, min(span.end, e.end_sec) - max(span.start, e.start_sec)) for e in tbl.entries
        ]
        if max(overlaps) > 0.0:
            best = _argmin([-o for o in overlaps])
        else:
            mid = (span.start + span.end) / 2.0
            best = _argmin([abs(mid - (e.start_sec + e.end_sec) / 2.0) for e in tbl.entries])
        start_idx = end_idx = best
    return SubtitleSpan(start_idx, end_idx)


def subtitle_to_frame(span: SubtitleSpan, tbl: TimelineTable) -> FrameSpan:
    """Time extent of a subtitle-index span: [start of first, end of last]."""
    if span.end_idx >= len(tbl.entries):
        raise IndexError(f"subtitle span {span} out of range for table of size {len(tbl.entries)}")
    return FrameSpan(tbl.entries[span.start_idx].start_sec, tbl.entries[span.end_idx].end_sec)


def token_span_of_subtitles(span: SubtitleSpan, tbl: TimelineTable) -> TokenSpan:
    """First token of the start subtitle through last token of the end subtitle."""
    if span.end_idx >= len(tbl.entries):
        raise IndexError(f"subtitle span {span} out of range for table of size {len(tbl.entries)}")
    return TokenSpan(tbl.entries[span.start_idx].token_start, tbl.entries[span.end_idx].token_end)


def subtitle_span_of_tokens(span: TokenSpan, tbl: TimelineTable) -> SubtitleSpan:
    """Subtitle indices owning the boundary tokens; question tokens are illegal."""

    def owner(tok: int) -> int:
        for e in tbl.entries:
            if e.token_start <= tok <= e.token_end:
                return e.index
        raise ValueError(f"token {tok} does not belong to any subtitle (question token?)")

    return SubtitleSpan(owner(span.start_tok), owner(span.end_tok))


def frame_buckets(span: FrameSpan, duration_k: int) -> tuple[int, int]:
    """Snap a time span to unit frame buckets [t, t+1), t in 0..k-1.

    Start bucket is floor(start), end bucket is ceil(end)-1, both clamped
    into range and kept ordered so degenerate spans still give a target.
    """
    start = min(duration_k - 1, max(0, math.floor(span.start)))
    end = min(duration_k - 1, max(0, math.ceil(span.end) - 1))
    return start, max(start, end)


def bucket_span_to_frames(start_bucket: int, end_bucket: int) -> FrameSpan:
    """Continuous time extent of an inclusive bucket span."""
    return FrameSpan(float(start_bucket), float(end_bucket + 1))


def ground_truth_targets(s: Sample, tbl: TimelineTable) -> GroundTruth:
    """Frame-bucket targets from the answer span, plus token targets when
    the sample has subtitles."""
    fs, fe = frame_buckets(s.answer_frames, s.duration_k)
    if not tbl.entries:
        return GroundTruth(fs, fe, None)
    sub_span = frame_to_subtitle(s.answer_frames, tbl)
    return GroundTruth(fs, fe, token_span_of_subtitles(sub_span, tbl))


def compute_metrics(predictions: list[FrameSpan], truths: list[FrameSpan]) -> MetricsReport:
    if len(predictions) != len(truths):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths")
    if not predictions:
        raise ValueError("cannot compute metrics on empty input")
    ious = tuple(temporal_iou(p, t) for p, t in zip(predictions, truths))
    iou_at = {
        mu: 100.0 * sum(1 for i in ious if i >= mu) / len(ious) for mu in IOU_THRESHOLDS
    }
    return MetricsReport(iou_at=iou_at, miou=100.0 * sum(ious) / len(ious), per_sample_iou=ious)
