"""Span losses, decoding, pseudo-label construction, and the dynamic
one-way mutual objective.

Each predictor is additionally trained toward the other predictor's
decoded span, converted across modalities through the timeline table. The
mutual terms are weighted by how well the converted pseudo label matches
the ground truth (alpha for the visual term, beta for the textual term)
and the pseudo labels are plain integers, so no gradient ever reaches the
predictor that produced them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import torch

from .data import FrameSpan, TokenSpan
from .network import MASK_SENTINEL, SpanLogits
from .timeline import (
    GroundTruth,
    TimelineTable,
    bucket_span_to_frames,
    frame_buckets,
    frame_to_subtitle,
    index_iou,
    subtitle_span_of_tokens,
    subtitle_to_frame,
    temporal_iou,
    token_span_of_subtitles,
)

__all__ = [
    "TransferState",
    "LossBundle",
    "span_ce",
    "decode_span",
    "build_pseudo_labels",
    "odl_weights",
    "mutual_losses",
    "total_loss",
]

# anything at or below this is treated as a masked logit
_MASKED_BELOW = MASK_SENTINEL / 2


@dataclass(frozen=True)
class TransferState:
    """Decoded spans, converted pseudo labels, and the dynamic weights."""

    visual_pred_span: FrameSpan  # decoded visual span as continuous seconds
    textual_pred_span: Optional[TokenSpan]
    pseudo_visual: Optional[tuple[int, int]]  # frame-bucket targets from the textual side
    pseudo_textual: Optional[TokenSpan]  # token targets from the visual side
    alpha: Optional[float] = None
    beta: Optional[float] = None

    @property
    def has_pseudo(self) -> bool:
        return self.pseudo_visual is not None and self.pseudo_textual is not None


@dataclass
class LossBundle:
    loss_visual: torch.Tensor
    loss_textual: torch.Tensor
    loss_visual_mutual: torch.Tensor
    loss_textual_mutual: torch.Tensor
    total: torch.Tensor


def span_ce(start_logits: torch.Tensor, end_logits: torch.Tensor, target_start: int, target_end: int) -> torch.Tensor:
    """Cross entropy of the start softmax at target_start plus the end
    softmax at target_end. Masked (sentinel) positions never carry weight;
    a masked target is an error."""
    for logits, target in ((start_logits, target_start), (end_logits, target_end)):
        if not (0 <= target < logits.shape[0]):
            raise IndexError(f"target {target} outside logits of length {logits.shape[0]}")
        if float(logits[target].detach()) <= _MASKED_BELOW:
            raise ValueError(f"target {target} lies on a masked position")
    return -(
        torch.log_softmax(start_logits, dim=0)[target_start]
        + torch.log_softmax(end_logits, dim=0)[target_end]
    )


def decode_span(start_logits, end_logits, mask=None, max_len: Optional[int] = None) -> tuple[int, int]:
    """Best pair (s, e), s <= e, both unmasked, e - s <= max_len, maximizing
    start[s] + end[e]; ties resolve to the smallest s, then smallest e.

    Runs one left-to-right scan with a running argmax of the start logits
    (windowed when max_len is set), which matches exhaustive pair search
    including tie order.
    """
    start = np.asarray(start_logits.detach().cpu().numpy() if torch.is_tensor(start_logits) else start_logits, dtype=np.float64)
    end = np.asarray(end_logits.detach().cpu().numpy() if torch.is_tensor(end_logits) else end_logits, dtype=np.float64)
    if mask is None:
        allowed = np.ones(len(start), dtype=bool)
    else:
        allowed = np.asarray(mask.detach().cpu().numpy() if torch.is_tensor(mask) else mask, dtype=bool)
    if not allowed.any():
        raise ValueError("cannot decode a fully masked span")

    best_pair = None
    best_sum = -np.inf
    best_s = -1  # index of the running best allowed start
    for e in range(len(start)):
        lo = 0 if max_len is None else max(0, e - max_len)
        if best_s < lo:  # previous best start slid out of the window
            best_s = -1
            for s in range(lo, e):
                if allowed[s] and (best_s < 0 or start[s] > start[best_s]):
                    best_s = s
        if allowed[e] and (best_s < 0 or start[e] > start[best_s]):
            best_s = e
        if not allowed[e] or best_s < 0:
            continue
        cand = start[best_s] + end[e]
        if cand > best_sum:
            best_sum = cand
            best_pair = (best_s, e)
    assert best_pair is not None
    return best_pair


def build_pseudo_labels(logits: SpanLogits, tbl: TimelineTable, max_len: Optional[int] = None) -> TransferState:
    """Decode both predictors and convert each span across modalities.

    The visual span becomes token targets (frames -> subtitles -> tokens)
    and the textual span becomes frame-bucket targets (tokens -> subtitles
    -> time -> buckets). Samples without subtitle tokens yield no pseudo
    labels and the mutual terms are skipped.
    """
    vs, ve = decode_span(logits.v_start, logits.v_end, max_len=max_len)
    visual_span = bucket_span_to_frames(vs, ve)
    if not logits.has_text or not tbl.entries:
        return TransferState(visual_span, None, None, None)

    pseudo_textual = token_span_of_subtitles(frame_to_subtitle(visual_span, tbl), tbl)

    ts, te = decode_span(logits.t_start, logits.t_end, mask=logits.t_mask, max_len=max_len)
    textual_span = TokenSpan(ts, te)
    pseudo_time = subtitle_to_frame(subtitle_span_of_tokens(textual_span, tbl), tbl)
    pseudo_visual = frame_buckets(pseudo_time, tbl.duration_k)
    return TransferState(visual_span, textual_span, pseudo_visual, pseudo_textual)


def odl_weights(state: TransferState, gt: GroundTruth, answer: FrameSpan, tbl: TimelineTable) -> tuple[float, float]:
    """Dynamic weights: alpha scores the textual-derived frame pseudo label
    against the true answer interval, beta scores the visual-derived token
    pseudo label against the true token span."""
    if not state.has_pseudo or gt.token_span is None:
        raise ValueError("pseudo labels are required to compute dynamic weights")
    alpha = temporal_iou(bucket_span_to_frames(*state.pseudo_visual), answer)
    beta = index_iou(state.pseudo_textual, gt.token_span)
    return alpha, beta


def mutual_losses(logits: SpanLogits, state: TransferState, alpha: float, beta: float):
    """One-way weighted CE toward the converted pseudo labels. alpha and
    beta enter as plain floats, and the targets are integers, so each term
    can only train the predictor whose logits it contains."""
    lvm = alpha * span_ce(logits.v_start, logits.v_end, *state.pseudo_visual)
    ltm = beta * span_ce(logits.t_start, logits.t_end, state.pseudo_textual.start_tok, state.pseudo_textual.end_tok)
    return lvm, ltm


def total_loss(
    logits: SpanLogits,
    gt: GroundTruth,
    tbl: TimelineTable,
    answer: FrameSpan,
    mkt_enabled: bool = True,
    max_len: Optional[int] = None,
) -> tuple[LossBundle, Optional[TransferState]]:
    """Full per-sample objective: supervised CE for both predictors plus,
    when enabled and derivable, the two dynamic mutual terms."""
    zero = logits.v_start.sum() * 0.0
    loss_visual = span_ce(logits.v_start, logits.v_end, gt.frame_start, gt.frame_end)
    if gt.token_span is not None:
        loss_textual = span_ce(logits.t_start, logits.t_end, gt.token_span.start_tok, gt.token_span.end_tok)
    else:
        loss_textual = zero

    state = None
    lvm, ltm = zero, zero
    if mkt_enabled:
        state = build_pseudo_labels(logits, tbl, max_len=max_len)
        if state.has_pseudo and gt.token_span is not None:
            alpha, beta = odl_weights(state, gt, answer, tbl)
            state = replace(state, alpha=alpha, beta=beta)
            lvm, ltm = mutual_losses(logits, state, alpha, beta)

    bundle = LossBundle(
        loss_visual=loss_visual,
        loss_textual=loss_textual,
        loss_visual_mutual=lvm,
        loss_textual_mutual=ltm,
        total=loss_visual + loss_textual + lvm + ltm,
    )
    return bundle, state
