"""Deterministic synthetic corpora with a plantable, learnable answer signal.

Each sample gets a question whose leading token picks a topic; the topic
selects (a) a latent direction added to the video feature rows inside the
answer span and (b) a cluster of answer-region vocabulary ids used for
subtitle tokens inside the span. The topic tables are fixed per corpus
seed, so the question-to-signal map is consistent across samples and both
modalities carry a partial, exploitable signal. Subtitle segments are a
random partition of [0, k] with slots dropped at ``subtitle_gap_prob``,
so answers can extend into uncovered time.

The vocabulary is split into three id bands (question / background /
answer-cluster) so a per-token scorer has something to latch onto while
the cluster itself still varies with the question.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FrameSpan, Sample, Subtitle, validate_sample

__all__ = ["GenConfig", "generate_corpus", "split_corpus"]


@dataclass(frozen=True)
class GenConfig:
    num_samples: int
    k: int = 64
    d_in: int = 32
    vocab_size: int = 256
    num_subtitles_range: tuple[int, int] = (4, 10)
    answer_len_range: tuple[int, int] = (4, 16)
    subtitle_gap_prob: float = 0.2
    signal_strength: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_samples < 0:
            raise ValueError("num_samples must be >= 0")
        if self.k < 1 or self.d_in < 1 or self.vocab_size < 16:
            raise ValueError("k, d_in must be >= 1 and vocab_size >= 16")
        for name, (lo, hi) in (
            ("num_subtitles_range", self.num_subtitles_range),
            ("answer_len_range", self.answer_len_range),
        ):
            if lo > hi or lo < 1:
                raise ValueError(f"{name} must be a nonempty positive interval, got [{lo}, {hi}]")
        if not (0.0 <= self.subtitle_gap_prob <= 1.0):
            raise ValueError("subtitle_gap_prob must be in [0, 1]")
        if self.k < self.answer_len_range[1]:
            raise ValueError("k must be >= the maximum answer length")
        if self.noise_std < 0 or self.signal_strength < 0:
            raise ValueError("noise_std and signal_strength must be >= 0")


def _vocab_bands(vocab_size: int) -> tuple[int, int]:
    # question ids [0, q_end), background [q_end, bg_end), cluster pool [bg_end, vocab)
    q_end = vocab_size // 4
    bg_end = vocab_size - vocab_size // 4
    return q_end, bg_end

_QUESTION_LEN = (3, 8)
_CLUSTER_SIZE = 8
_TOKENS_PER_SEC = 1.0


def _topic_tables(cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-topic signal directions and token clusters, fixed by the corpus
    seed so the question-to-signal map is learnable across samples."""
    q_end, bg_end = _vocab_bands(cfg.vocab_size)
    rng = np.random.default_rng([cfg.seed, 7919])
    directions = rng.normal(size=(q_end, cfg.d_in))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    clusters = rng.integers(bg_end, cfg.vocab_size, size=(q_end, _CLUSTER_SIZE))
    return directions, clusters


def _generate_sample(cfg: GenConfig, idx: int, directions: np.ndarray, clusters: np.ndarray) -> Sample:
    rng = np.random.default_rng([cfg.seed, idx])
    k = cfg.k
    q_end, bg_end = _vocab_bands(cfg.vocab_size)

    q_len = int(rng.integers(_QUESTION_LEN[0], _QUESTION_LEN[1] + 1))
    question = rng.integers(0, q_end, size=q_len)

    # the leading question token carries the topic
    topic = int(question[0])
    signal = directions[topic]
    cluster = clusters[topic]

    ans_len = int(rng.integers(cfg.answer_len_range[0], cfg.answer_len_range[1] + 1))
    ans_start = int(rng.integers(0, k - ans_len + 1))
    answer = FrameSpan(float(ans_start), float(ans_start + ans_len))

    features = rng.normal(0.0, cfg.noise_std, size=(k, cfg.d_in))
    features[ans_start : ans_start + ans_len] += cfg.signal_strength * signal

    num_subs = int(rng.integers(cfg.num_subtitles_range[0], cfg.num_subtitles_range[1] + 1))
    num_subs = min(num_subs, k)
    cuts = np.sort(rng.choice(np.arange(1, k), size=num_subs - 1, replace=False)) if num_subs > 1 else np.array([], dtype=int)
    bounds = [0, *cuts.tolist(), k]
    keep = rng.random(num_subs) >= cfg.subtitle_gap_prob
    if not keep.any():
        keep[int(rng.integers(0, num_subs))] = True  # keep the textual path usable

    subtitles = []
    for i in range(num_subs):
        if not keep[i]:
            continue
        s0, e0 = float(bounds[i]), float(bounds[i + 1])
        count = max(1, int(round((e0 - s0) * _TOKENS_PER_SEC)))
        ids = []
        for j in range(count):
            t_mid = s0 + (j + 0.5) * (e0 - s0) / count
            if answer.start <= t_mid <= answer.end:
                ids.append(int(cluster[rng.integers(0, len(cluster))]))
            else:
                ids.append(int(rng.integers(q_end, bg_end)))
        subtitles.append(Subtitle(s0, e0, tuple(ids)))

    return Sample(
        id=f"syn-{cfg.seed}-{idx:05d}",
        duration_k=k,
        video_features=features,
        subtitles=tuple(subtitles),
        question_tokens=tuple(int(t) for t in question),
        answer_frames=answer,
    )


def generate_corpus(cfg: GenConfig) -> list[Sample]:
    """Generate ``cfg.num_samples`` valid samples, deterministic in the seed.

    Each sample is seeded by (seed, index), so order never depends on
    generation scheduling.
    """
    cfg.validate()
    directions, clusters = _topic_tables(cfg)
    samples = [_generate_sample(cfg, i, directions, clusters) for i in range(cfg.num_samples)]
    for s in samples:
        violations = validate_sample(s)
        if violations:  # generator bug, not user error
            raise AssertionError(f"generated invalid sample {s.id}: {violations}")
    return samples


def split_corpus(corpus: list[Sample], train_frac: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Disjoint seeded train/test partition, sizes (round(frac*n), rest)."""
    if not (0.0 < train_frac < 1.0):
        raise ValueError("train_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n_train = int(round(train_frac * len(corpus)))
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    return [corpus[i] for i in train_idx], [corpus[i] for i in test_idx]
