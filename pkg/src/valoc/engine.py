"""Training, evaluation, ablation protocol, and run reporting.

Runs are deterministic given the config seed: model init, data order, and
the optimizer see no other randomness. The final output span comes from
the textual predictor (converted through the timeline table); samples
without subtitles fall back to the visual predictor, which always has an
answer.
"""

from __future__ import annotations

import csv
import io
import json
import random
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import torch

from .data import FrameSpan, Sample, TokenSpan, token_layout
from .network import CrossModalSpanNet, ModelConfig, sample_inputs
from .objective import decode_span, total_loss
from .timeline import (
    GroundTruth,
    MetricsReport,
    TimelineTable,
    bucket_span_to_frames,
    build_table,
    compute_metrics,
    ground_truth_targets,
    subtitle_span_of_tokens,
    subtitle_to_frame,
)

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainReport",
    "AblationRow",
    "AblationResult",
    "TrainingDivergedError",
    "ManifestMismatchError",
    "train",
    "evaluate",
    "ablate",
    "alpha_beta_trace",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingDivergedError(RuntimeError):
    """Non-finite loss encountered; carries the offending epoch and step."""


class ManifestMismatchError(RuntimeError):
    """Checkpoint manifest disagrees with the expected model config."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. The reference setup uses lr 1e-5, batch 4 and
    15 epochs at d=1024; the desk-scale defaults below are sized for the
    synthetic corpora."""

    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    weight_decay: float = 0.0
    seed: int = 0
    mkt_enabled: bool = True
    d: int = 64
    d_in: int = 32
    vocab_size: int = 256
    kernel_size: int = 1
    max_len: Optional[int] = None

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, d_in=self.d_in, vocab_size=self.vocab_size,
            kernel_size=self.kernel_size, seed=self.seed,
        )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss_visual: float
    loss_textual: float
    loss_visual_mutual: float
    loss_textual_mutual: float
    loss_total: float
    mean_alpha: Optional[float]
    mean_beta: Optional[float]
    val_metrics: dict[str, float]


@dataclass
class TrainReport:
    config: dict
    epochs: list[EpochStats]
    best_epoch: int
    best_miou: float
    checkpoint_path: Optional[str]
    wall_clock_sec: float

    @property
    def mkt_enabled(self) -> bool:
        return bool(self.config["mkt_enabled"])

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_miou": self.best_miou,
            "checkpoint_path": self.checkpoint_path,
            "wall_clock_sec": self.wall_clock_sec,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainReport":
        return TrainReport(
            config=d["config"],
            epochs=[EpochStats(**e) for e in d["epochs"]],
            best_epoch=d["best_epoch"],
            best_miou=d["best_miou"],
            checkpoint_path=d.get("checkpoint_path"),
            wall_clock_sec=d["wall_clock_sec"],
        )

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def load_json(path) -> "TrainReport":
        return TrainReport.from_dict(json.loads(Path(path).read_text()))

    def losses_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["epoch", "loss_visual", "loss_textual", "loss_visual_mutual",
                    "loss_textual_mutual", "loss_total", "val_miou"])
        for e in self.epochs:
            w.writerow([e.epoch, e.loss_visual, e.loss_textual, e.loss_visual_mutual,
                        e.loss_textual_mutual, e.loss_total, e.val_metrics["miou"]])
        return buf.getvalue()


@dataclass
class _Prepared:
    video: torch.Tensor
    tokens: torch.Tensor
    mask: torch.Tensor
    table: TimelineTable
    gt: GroundTruth
    answer: FrameSpan


def _prepare(sample: Sample, dtype: torch.dtype) -> _Prepared:
    video, tokens, mask = sample_inputs(sample, dtype=dtype)
    table = build_table(sample, token_layout(sample))
    return _Prepared(video, tokens, mask, table, ground_truth_targets(sample, table), sample.answer_frames)


def train(
    corpus_train: list[Sample],
    corpus_val: list[Sample],
    cfg: TrainConfig,
    out_dir=None,
) -> tuple[TrainReport, CrossModalSpanNet]:
    """Optimize the total objective; returns the report and the model
    restored to its best-validation-mIoU parameters."""
    cfg.validate()
    if not corpus_train or not corpus_val:
        raise ValueError("corpora must be nonempty")
    t0 = time.perf_counter()
    model = CrossModalSpanNet(cfg.model_config())
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8,
        weight_decay=cfg.weight_decay,
    )
    order_rng = random.Random(cfg.seed)
    prepared = [_prepare(s, model.dtype) for s in corpus_train]

    rows: list[EpochStats] = []
    best_miou, best_epoch = -1.0, -1
    best_state = None
    for epoch in range(cfg.epochs):
        model.train()
        order = list(range(len(prepared)))
        order_rng.shuffle(order)
        sums = {"loss_visual": 0.0, "loss_textual": 0.0,
                "loss_visual_mutual": 0.0, "loss_textual_mutual": 0.0, "loss_total": 0.0}
        alphas: list[float] = []
        betas: list[float] = []
        for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[lo : lo + cfg.batch_size]
            opt.zero_grad()
            totals = []
            for i in batch:
                item = prepared[i]
                _, logits = model(item.video, item.tokens, item.mask)
                for t in (logits.v_start, logits.v_end, logits.t_start, logits.t_end):
                    if not torch.isfinite(t).all():  # masked sentinels are finite
                        raise TrainingDivergedError(
                            f"non-finite logits at epoch {epoch}, step {step}"
                        )
                bundle, state = total_loss(
                    logits, item.gt, item.table, item.answer,
                    mkt_enabled=cfg.mkt_enabled, max_len=cfg.max_len,
                )
                totals.append(bundle.total)
                sums["loss_visual"] += float(bundle.loss_visual.detach())
                sums["loss_textual"] += float(bundle.loss_textual.detach())
                sums["loss_visual_mutual"] += float(bundle.loss_visual_mutual.detach())
                sums["loss_textual_mutual"] += float(bundle.loss_textual_mutual.detach())
                sums["loss_total"] += float(bundle.total.detach())
                if state is not None and state.alpha is not None:
                    alphas.append(state.alpha)
                    betas.append(state.beta)
            loss = torch.stack(totals).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()

        n = len(prepared)
        val = evaluate(model, corpus_val, max_len=cfg.max_len)
        rows.append(EpochStats(
            epoch=epoch,
            mean_alpha=(sum(alphas) / len(alphas)) if alphas else None,
            mean_beta=(sum(betas) / len(betas)) if betas else None,
            val_metrics=val.as_flat_dict(),
            **{k: v / n for k, v in sums.items()},
        ))
        if val.miou > best_miou:
            best_miou, best_epoch = val.miou, epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = str(out_dir / "checkpoint_best.pt")
        save_checkpoint(model, checkpoint_path)
    report = TrainReport(
        config=asdict(cfg),
        epochs=rows,
        best_epoch=best_epoch,
        best_miou=best_miou,
        checkpoint_path=checkpoint_path,
        wall_clock_sec=time.perf_counter() - t0,
    )
    return report, model


def evaluate(
    model: CrossModalSpanNet,
    corpus: list[Sample],
    predictor: str = "textual",
    max_len: Optional[int] = None,
) -> MetricsReport:
    """Score decoded spans against ground truth. The textual route converts
    the decoded token span to time through the table; subtitle-free samples
    fall back to the visual span."""
    if not corpus:
        raise ValueError("cannot evaluate on an empty corpus")
    if predictor not in ("textual", "visual"):
        raise ValueError(f"unknown predictor {predictor!r}")
    model.eval()
    preds: list[FrameSpan] = []
    with torch.no_grad():
        for s in corpus:
            video, tokens, mask = sample_inputs(s, dtype=model.dtype)
            _, logits = model(video, tokens, mask)
            table = build_table(s, token_layout(s))
            if predictor == "textual" and logits.has_text and table.entries:
                ts, te = decode_span(logits.t_start, logits.t_end, mask=logits.t_mask, max_len=max_len)
                span = subtitle_to_frame(subtitle_span_of_tokens(TokenSpan(ts, te), table), table)
            else:
                vs, ve = decode_span(logits.v_start, logits.v_end, max_len=max_len)
                span = bucket_span_to_frames(vs, ve)
            preds.append(span)
    return compute_metrics(preds, [s.answer_frames for s in corpus])


@dataclass(frozen=True)
class AblationRow:
    seed: object  # int, or "mean" for the aggregate rows
    predictor: str  # "TP" | "VP"
    mkt: bool
    metrics: dict[str, float]


@dataclass
class AblationResult:
    rows: list[AblationRow]
    mean_rows: list[AblationRow]
    reports: dict = field(default_factory=dict)  # (seed, mkt) -> TrainReport

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        cols = ["iou_0.3", "iou_0.5", "iou_0.7", "miou"]
        w.writerow(["seed", "predictor", "mkt", *cols])
        for r in [*self.rows, *self.mean_rows]:
            w.writerow([r.seed, r.predictor, "mkt" if r.mkt else "no_mkt",
                        *[f"{r.metrics[c]:.4f}" for c in cols]])
        return buf.getvalue()

    def mean_miou(self, predictor: str, mkt: bool) -> float:
        for r in self.mean_rows:
            if r.predictor == predictor and r.mkt == mkt:
                return r.metrics["miou"]
        raise KeyError((predictor, mkt))


def ablate(
    corpus_train: list[Sample],
    corpus_val: list[Sample],
    cfg: TrainConfig,
    seeds: list[int],
) -> AblationResult:
    """For each seed, train with and without mutual transfer from identical
    init and data order, then score both predictors separately."""
    if not seeds:
        raise ValueError("need at least one seed")
    rows: list[AblationRow] = []
    reports: dict = {}
    for seed in seeds:
        for mkt in (True, False):
            run_cfg = replace(cfg, seed=seed, mkt_enabled=mkt)
            report, model = train(corpus_train, corpus_val, run_cfg)
            reports[(seed, mkt)] = report
            for pred_name, route in (("TP", "textual"), ("VP", "visual")):
                metrics = evaluate(model, corpus_val, predictor=route, max_len=cfg.max_len)
                rows.append(AblationRow(seed, pred_name, mkt, metrics.as_flat_dict()))
    mean_rows = []
    for pred_name in ("TP", "VP"):
        for mkt in (True, False):
            group = [r for r in rows if r.predictor == pred_name and r.mkt == mkt]
            mean_rows.append(AblationRow(
                "mean", pred_name, mkt,
                {k: sum(r.metrics[k] for r in group) / len(group) for k in group[0].metrics},
            ))
    return AblationResult(rows=rows, mean_rows=mean_rows, reports=reports)


def alpha_beta_trace(report: TrainReport) -> str:
    """CSV rows (epoch, mean_alpha, mean_beta) from a transfer-enabled run."""
    if not report.mkt_enabled:
        raise ValueError("alpha/beta trace requires a run with mutual transfer enabled")
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epoch", "mean_alpha", "mean_beta"])
    for e in report.epochs:
        w.writerow([e.epoch,
                    "" if e.mean_alpha is None else f"{e.mean_alpha:.6f}",
                    "" if e.mean_beta is None else f"{e.mean_beta:.6f}"])
    return buf.getvalue()


def save_checkpoint(model: CrossModalSpanNet, path) -> None:
    torch.save({"manifest": asdict(model.cfg), "state_dict": model.state_dict()}, path)


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> CrossModalSpanNet:
    """Rebuild the model from a checkpoint archive; any disagreement between
    manifest, stored arrays, or the expected config fails loudly."""
    try:
        blob = torch.load(path, weights_only=True)
        manifest = dict(blob["manifest"])
        state = blob["state_dict"]
    except Exception as exc:
        raise ManifestMismatchError(f"unreadable checkpoint {path}: {exc}") from exc
    try:
        cfg = ModelConfig(**manifest)
    except TypeError as exc:
        raise ManifestMismatchError(f"bad manifest keys in {path}: {sorted(manifest)}") from exc
    if expected is not None and cfg != expected:
        raise ManifestMismatchError(f"manifest mismatch: checkpoint has {cfg}, expected {expected}")
    model = CrossModalSpanNet(cfg)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ManifestMismatchError(f"manifest mismatch: arrays do not fit manifest {cfg}: {exc}") from exc
    return model
