#!/usr/bin/env python3
"""Regenerate the committed smoke assets under tests/data/smoke/.

The golden metrics file is produced by evaluating the smoke checkpoint on
the smoke corpus; the CLI test replays that evaluation and must reproduce
the file exactly.
"""

import json
from pathlib import Path

from valoc.data import save_corpus
from valoc.engine import TrainConfig, evaluate, save_checkpoint, train
from valoc.synthgen import GenConfig, generate_corpus, split_corpus

SMOKE_DIR = Path(__file__).resolve().parent.parent / "tests" / "data" / "smoke"

GEN = GenConfig(num_samples=24, k=12, d_in=6, answer_len_range=(3, 6),
                num_subtitles_range=(2, 4), seed=404)
TRAIN = TrainConfig(epochs=3, batch_size=4, d=8, d_in=6, seed=404)


def main():
    SMOKE_DIR.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(GEN)
    train_set, eval_set = split_corpus(corpus, 0.75, seed=1)
    save_corpus(eval_set, SMOKE_DIR / "corpus.jsonl")
    _, model = train(train_set, eval_set, TRAIN)
    save_checkpoint(model, SMOKE_DIR / "checkpoint.pt")
    metrics = evaluate(model, eval_set)
    golden = SMOKE_DIR / "golden_metrics.json"
    golden.write_text(json.dumps(metrics.as_flat_dict(), indent=2, sort_keys=True))
    print(f"wrote smoke corpus ({len(eval_set)} samples), checkpoint, and {golden}")
    print(json.dumps(metrics.as_flat_dict(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
