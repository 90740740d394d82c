import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valoc.data import FrameSpan, TokenSpan, token_layout
from valoc.timeline import (
    MetricsReport,
    SubtitleSpan,
    TableEntry,
    TimelineTable,
    build_table,
    compute_metrics,
    frame_buckets,
    frame_to_subtitle,
    ground_truth_targets,
    index_iou,
    subtitle_span_of_tokens,
    subtitle_to_frame,
    temporal_iou,
    token_span_of_subtitles,
)

from conftest import make_sample
from oracles import oracle_index_iou, oracle_temporal_iou


def random_table(rng, max_subs=6, k_max=60):
    """Valid random table: strictly increasing integer boundaries, token
    ranges packed after a random question length."""
    nsubs = int(rng.integers(1, max_subs + 1))
    k = int(rng.integers(2 * nsubs + 1, k_max))
    cuts = np.sort(rng.choice(np.arange(0, k + 1), size=2 * nsubs, replace=False))
    tok = int(rng.integers(0, 4))  # question length
    entries = []
    for i in range(nsubs):
        count = int(rng.integers(1, 5))
        entries.append(TableEntry(i, float(cuts[2 * i]), float(cuts[2 * i + 1]), tok, tok + count - 1))
        tok += count
    return TimelineTable(tuple(entries), duration_k=k)


class TestBuildTable:
    def test_three_entries(self, three_sub_sample, three_sub_table):
        tbl = three_sub_table
        assert [(e.start_sec, e.end_sec) for e in tbl.entries] == [(0, 10), (10, 25), (25, 40)]
        assert tbl.duration_k == 40

    def test_zero_subtitles(self):
        s = make_sample([], k=10, answer=(0.0, 5.0))
        assert build_table(s, token_layout(s)).entries == ()

    def test_token_ranges_match_layout(self, three_sub_sample, three_sub_table):
        lay = token_layout(three_sub_sample)
        assert [(e.token_start, e.token_end) for e in three_sub_table.entries] == list(lay.subtitle_token_range)


class TestTemporalIou:
    def test_identity(self):
        assert temporal_iou(FrameSpan(2, 6), FrameSpan(2, 6)) == 1.0

    def test_disjoint(self):
        assert temporal_iou(FrameSpan(0, 2), FrameSpan(4, 6)) == 0.0

    def test_partial_overlap(self):
        assert temporal_iou(FrameSpan(2, 6), FrameSpan(4, 10)) == pytest.approx(0.25)

    def test_zero_length_identical(self):
        assert temporal_iou(FrameSpan(3, 3), FrameSpan(3, 3)) == 1.0

    def test_zero_length_different(self):
        assert temporal_iou(FrameSpan(3, 3), FrameSpan(4, 4)) == 0.0
        assert temporal_iou(FrameSpan(3, 3), FrameSpan(1, 5)) == 0.0

    @given(st.tuples(*[st.floats(0, 100) for _ in range(4)]))
    @settings(max_examples=300, deadline=None)
    def test_matches_oracle_and_symmetry(self, vals):
        a = FrameSpan(min(vals[0], vals[1]), max(vals[0], vals[1]))
        b = FrameSpan(min(vals[2], vals[3]), max(vals[2], vals[3]))
        got = temporal_iou(a, b)
        assert got == pytest.approx(oracle_temporal_iou((a.start, a.end), (b.start, b.end)), abs=1e-12)
        assert got == temporal_iou(b, a)
        assert 0.0 <= got <= 1.0


class TestIndexIou:
    def test_identity(self):
        assert index_iou(TokenSpan(2, 4), TokenSpan(2, 4)) == 1.0

    def test_disjoint_singletons(self):
        assert index_iou(TokenSpan(0, 0), TokenSpan(1, 1)) == 0.0

    def test_enumerated(self):
        assert index_iou(TokenSpan(1, 4), TokenSpan(3, 6)) == pytest.approx(2 / 6)

    def test_kind_mismatch(self):
        with pytest.raises(TypeError):
            index_iou(TokenSpan(1, 2), SubtitleSpan(1, 2))

    def test_subtitle_spans_work_too(self):
        assert index_iou(SubtitleSpan(0, 2), SubtitleSpan(1, 3)) == pytest.approx(2 / 4)


class TestFrameToSubtitle:
    def test_exact_boundary(self, three_sub_table):
        assert frame_to_subtitle(FrameSpan(10, 25), three_sub_table) == SubtitleSpan(1, 1)

    def test_argmin_enumeration(self, three_sub_table):
        assert frame_to_subtitle(FrameSpan(12, 38), three_sub_table) == SubtitleSpan(1, 2)

    def test_inside_first_subtitle(self, three_sub_table):
        assert frame_to_subtitle(FrameSpan(1, 9), three_sub_table) == SubtitleSpan(0, 0)

    def test_empty_table(self):
        with pytest.raises(ValueError):
            frame_to_subtitle(FrameSpan(0, 1), TimelineTable((), 10))

    def test_inverted_fallback_max_overlap(self):
        # gapped table: a short span in the gap [10, 20] pulls start toward
        # the later subtitle and end toward the earlier one
        tbl = TimelineTable(
            (TableEntry(0, 0, 10, 0, 1), TableEntry(1, 20, 30, 2, 3)), duration_k=30
        )
        got = frame_to_subtitle(FrameSpan(9, 12), tbl)
        # naive argmins: start -> 1 (|9-20|=11 vs |9-0|=9 -> actually 0)...
        # compute directly: overlap with sub0 = 1, sub1 = 0 -> fallback hits 0
        naive_start = min(range(2), key=lambda i: abs(9 - tbl.entries[i].start_sec))
        naive_end = min(range(2), key=lambda i: abs(12 - tbl.entries[i].end_sec))
        assert (naive_start, naive_end) == (0, 0)  # no inversion here; sanity
        assert got == SubtitleSpan(0, 0)
        # force an inversion: span [18, 21] -> start argmin 1 (|18-20|=2), end argmin 0 (|21-10|=11 vs |21-30|=9 -> 1)
        got2 = frame_to_subtitle(FrameSpan(18.0, 20.5), tbl)
        # start: |18-0|=18 vs |18-20|=2 -> 1; end: |20.5-10|=10.5 vs |20.5-30|=9.5 -> 1
        assert got2 == SubtitleSpan(1, 1)
        # true inversion: start nearest subtitle 1, end nearest subtitle 0
        got3 = frame_to_subtitle(FrameSpan(16.0, 17.0), tbl)
        # start: |16-0| vs |16-20| -> 1; end: |17-10|=7 vs |17-30|=13 -> 0; inverted
        # overlap is zero for both; midpoint 16.5 is nearer sub1's midpoint 25? |16.5-5|=11.5 vs |16.5-25|=8.5 -> 1
        assert got3 == SubtitleSpan(1, 1)

    def test_inverted_fallback_prefers_overlap(self):
        tbl = TimelineTable(
            (TableEntry(0, 0, 10, 0, 1), TableEntry(1, 20, 30, 2, 3)), duration_k=30
        )
        # start nearest sub1 (|19-20|=1), end nearest sub0 (|19.5-10|=9.5 vs 10.5), inverted;
        # but nothing overlaps more than sub0? overlap sub0 = 0, sub1 = 0 -> midpoints: |19.25-5| vs |19.25-25| -> sub1
        got = frame_to_subtitle(FrameSpan(19.0, 19.5), tbl)
        assert got == SubtitleSpan(1, 1)
        # with genuine overlap the overlapping subtitle wins even if midpoint is closer to the other
        got2 = frame_to_subtitle(FrameSpan(20.5, 20.6), tbl)
        assert got2 == SubtitleSpan(1, 1)


class TestSubtitleToFrame:
    def test_direct_lookup(self, three_sub_table):
        assert subtitle_to_frame(SubtitleSpan(1, 1), three_sub_table) == FrameSpan(10, 25)

    def test_full_extent(self, three_sub_table):
        assert subtitle_to_frame(SubtitleSpan(0, 2), three_sub_table) == FrameSpan(0, 40)

    def test_out_of_range(self, three_sub_table):
        with pytest.raises(IndexError):
            subtitle_to_frame(SubtitleSpan(0, 3), three_sub_table)

    def test_roundtrip_identity_random_tables(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            tbl = random_table(rng)
            n = len(tbl.entries)
            i = int(rng.integers(0, n))
            j = int(rng.integers(i, n))
            span = SubtitleSpan(i, j)
            assert frame_to_subtitle(subtitle_to_frame(span, tbl), tbl) == span


class TestTokenConversions:
    def test_layout_example(self, three_sub_table):
        assert token_span_of_subtitles(SubtitleSpan(0, 1), three_sub_table) == TokenSpan(3, 7)

    def test_two_and_four_token_layout(self):
        s = make_sample([(0, 10, (4, 5)), (10, 20, (6, 7, 8, 9))], k=20, question=(1, 2, 3),
                        answer=(0.0, 5.0))
        tbl = build_table(s, token_layout(s))
        assert token_span_of_subtitles(SubtitleSpan(0, 1), tbl) == TokenSpan(3, 8)

    def test_singleton(self, three_sub_table):
        e = three_sub_table.entries[2]
        assert token_span_of_subtitles(SubtitleSpan(2, 2), three_sub_table) == TokenSpan(e.token_start, e.token_end)

    def test_inverse_of_forward(self, three_sub_table):
        for i in range(3):
            for j in range(i, 3):
                span = SubtitleSpan(i, j)
                toks = token_span_of_subtitles(span, three_sub_table)
                assert subtitle_span_of_tokens(toks, three_sub_table) == span

    def test_question_token_rejected(self, three_sub_table):
        with pytest.raises(ValueError, match="question"):
            subtitle_span_of_tokens(TokenSpan(0, 5), three_sub_table)


class TestGroundTruthTargets:
    def test_bucket_rule(self, three_sub_sample, three_sub_table):
        gt = ground_truth_targets(three_sub_sample, three_sub_table)
        assert (gt.frame_start, gt.frame_end) == (10, 24)

    def test_full_span(self):
        s = make_sample([(0, 10, (4,))], k=10, answer=(0.0, 10.0))
        gt = ground_truth_targets(s, build_table(s, token_layout(s)))
        assert (gt.frame_start, gt.frame_end) == (0, 9)

    def test_answer_inside_subtitle(self, three_sub_sample, three_sub_table):
        gt = ground_truth_targets(three_sub_sample, three_sub_table)
        e = three_sub_table.entries[1]
        assert gt.token_span == TokenSpan(e.token_start, e.token_end)

    def test_no_subtitles_no_token_targets(self):
        s = make_sample([], k=10, answer=(2.0, 6.0))
        gt = ground_truth_targets(s, build_table(s, token_layout(s)))
        assert gt.token_span is None

    def test_fractional_answer_buckets(self):
        assert frame_buckets(FrameSpan(10.2, 24.9), 40) == (10, 24)
        assert frame_buckets(FrameSpan(0.0, 0.0), 40) == (0, 0)
        assert frame_buckets(FrameSpan(40.0, 40.0), 40) == (39, 39)


class TestMetrics:
    def test_perfect(self):
        spans = [FrameSpan(0, 5), FrameSpan(3, 9)]
        rep = compute_metrics(spans, spans)
        assert rep.miou == 100.0
        assert all(v == 100.0 for v in rep.iou_at.values())

    def test_hand_counted(self):
        preds = [FrameSpan(0, 4), FrameSpan(0, 2), FrameSpan(6, 8)]
        truths = [FrameSpan(0, 4), FrameSpan(0, 4), FrameSpan(0, 4)]
        rep = compute_metrics(preds, truths)  # per-sample IoUs 1.0, 0.5, 0.0
        assert rep.per_sample_iou == (1.0, 0.5, 0.0)
        assert rep.miou == pytest.approx(50.0)
        assert rep.iou_at[0.3] == pytest.approx(200 / 3)
        assert rep.iou_at[0.5] == pytest.approx(200 / 3)
        assert rep.iou_at[0.7] == pytest.approx(100 / 3)

    def test_all_disjoint(self):
        rep = compute_metrics([FrameSpan(0, 1)], [FrameSpan(5, 6)])
        assert rep.miou == 0.0 and all(v == 0.0 for v in rep.iou_at.values())

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_metrics([FrameSpan(0, 1)], [])
        with pytest.raises(ValueError):
            compute_metrics([], [])

    def test_flat_keys(self):
        rep = compute_metrics([FrameSpan(0, 1)], [FrameSpan(0, 1)])
        assert sorted(rep.as_flat_dict()) == ["iou_0.3", "iou_0.5", "iou_0.7", "miou"]

    def test_monotone_thresholds_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            preds, truths = [], []
            for _ in range(10):
                a = np.sort(rng.uniform(0, 50, 2)); b = np.sort(rng.uniform(0, 50, 2))
                preds.append(FrameSpan(*a)); truths.append(FrameSpan(*b))
            rep = compute_metrics(preds, truths)
            assert rep.iou_at[0.3] >= rep.iou_at[0.5] >= rep.iou_at[0.7]


def test_subtitle_aligned_answer_roundtrips_to_iou_one():
    rng = np.random.default_rng(7)
    for _ in range(100):
        tbl = random_table(rng)
        n = len(tbl.entries)
        i = int(rng.integers(0, n)); j = int(rng.integers(i, n))
        answer = subtitle_to_frame(SubtitleSpan(i, j), tbl)
        toks = token_span_of_subtitles(frame_to_subtitle(answer, tbl), tbl)
        back = subtitle_to_frame(subtitle_span_of_tokens(toks, tbl), tbl)
        assert temporal_iou(back, answer) == 1.0
