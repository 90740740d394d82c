import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from valoc.data import FrameSpan, Sample, Subtitle, token_layout
from valoc.timeline import build_table


def make_sample(
    subtitles,
    k=40,
    question=(1, 2, 3),
    answer=(10.0, 25.0),
    d_in=4,
    sample_id="fixture",
    features=None,
):
    """Hand-built sample; features default to zeros."""
    if features is None:
        features = np.zeros((k, d_in))
    return Sample(
        id=sample_id,
        duration_k=k,
        video_features=features,
        subtitles=tuple(Subtitle(s, e, tuple(toks)) for s, e, toks in subtitles),
        question_tokens=tuple(question),
        answer_frames=FrameSpan(*answer),
    )


@pytest.fixture
def three_sub_sample():
    """Three subtitles [(0,10),(10,25),(25,40)] over k=40, 3 question tokens."""
    return make_sample(
        subtitles=[(0, 10, (10, 11)), (10, 25, (12, 13, 14)), (25, 40, (15, 16))],
        k=40,
        question=(1, 2, 3),
        answer=(10.0, 25.0),
    )


@pytest.fixture
def three_sub_table(three_sub_sample):
    return build_table(three_sub_sample, token_layout(three_sub_sample))
