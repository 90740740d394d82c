"""Command-line surface: corpus generation, training, evaluation, the
mutual-transfer ablation, and alpha/beta trace export.

A YAML config file with ``gen`` and ``train`` sections seeds the settings;
any field can be overridden by a flag of the same name. The effective
config is echoed next to every command's outputs. Exit codes: 0 success,
1 usage/config error, 2 data or validation error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional

import yaml

from .data import CorpusError, load_corpus, save_corpus
from .engine import (
    ManifestMismatchError,
    TrainConfig,
    TrainingDivergedError,
    TrainReport,
    ablate,
    alpha_beta_trace,
    evaluate,
    load_checkpoint,
    train,
)
from .synthgen import GenConfig, generate_corpus

CONFIG_ENV_VAR = "VALOC_CONFIG"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_SECTIONS = {"gen": GenConfig, "train": TrainConfig}


def _coerce(field: dataclasses.Field, raw):
    if raw is None:
        return None
    text = str(raw)
    t = field.type
    if t in ("int", int):
        return int(text)
    if t in ("float", float):
        return float(text)
    if t in ("bool", bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean {field.name}={text!r}")
    if "tuple" in str(t):
        parts = [p for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
        if len(parts) != 2:
            raise ConfigError(f"{field.name} needs two comma-separated integers, got {text!r}")
        return (int(parts[0]), int(parts[1]))
    if "Optional[int]" in str(t):
        return None if text.lower() in ("none", "null", "") else int(text)
    return text


def _build_config(section: str, file_values: dict, overrides: dict, required: bool = False):
    """Merge file values and CLI overrides into the section's dataclass."""
    cls = _SECTIONS[section]
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(file_values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key in [{section}]: {sorted(unknown)[0]!r}")
    values = dict(file_values)
    for name, raw in overrides.items():
        if name in known and raw is not None:
            values[name] = _coerce(known[name], raw)
    # YAML already delivers typed values; lists become tuples for range fields
    for name, v in list(values.items()):
        if isinstance(v, list):
            values[name] = tuple(v)
    try:
        return cls(**values)
    except TypeError as exc:
        missing = [f.name for f in dataclasses.fields(cls)
                   if f.default is dataclasses.MISSING and f.name not in values]
        if missing and required:
            raise ConfigError(f"missing required config field [{section}] {missing[0]}") from exc
        raise ConfigError(str(exc)) from exc


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return {}
    doc = yaml.safe_load(Path(path).read_text())
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must be a mapping")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]!r}")
    for section, payload in doc.items():
        if payload is not None and not isinstance(payload, dict):
            raise ConfigError(f"config section [{section}] must be a mapping")
    return {k: (v or {}) for k, v in doc.items()}


def _echo_config(directory: Path, sections: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {name: dataclasses.asdict(cfg) for name, cfg in sections.items()}
    (directory / "effective_config.yaml").write_text(yaml.safe_dump(payload, sort_keys=True))


def _refuse_overwrite(paths, force: bool) -> None:
    for p in paths:
        if Path(p).exists() and not force:
            raise FileExistsError(f"refusing to overwrite {p} (use --force)")


def _add_override_flags(parser, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        parser.add_argument(f"--{f.name}", default=None, metavar="V", help=argparse.SUPPRESS)


def _overrides(args, cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        raw = getattr(args, f.name, None)
        if raw is not None:
            out[f.name] = raw
    return out


def cmd_generate(args) -> int:
    file_cfg = _load_config_file(args.config)
    overrides = _overrides(args, GenConfig, skip=("seed",))
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = _build_config("gen", file_cfg.get("gen", {}), overrides, required=True)
    out = Path(args.out)
    _refuse_overwrite([out], args.force)
    corpus = generate_corpus(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    _echo_config(out.parent, {"gen": cfg})
    print(f"wrote {len(corpus)} samples to {out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    file_cfg = _load_config_file(args.config)
    overrides = _overrides(args, TrainConfig, skip=("mkt_enabled", "seed"))
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = _build_config("train", file_cfg.get("train", {}), overrides)
    if getattr(args, "no_mkt", False):
        cfg = dataclasses.replace(cfg, mkt_enabled=False)
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    corpus_train = load_corpus(args.train_corpus)
    corpus_val = load_corpus(args.val_corpus)
    out = Path(args.out)
    outputs = [out / "report.json", out / "losses.csv", out / "checkpoint_best.pt"]
    _refuse_overwrite(outputs, args.force)
    report, _ = train(corpus_train, corpus_val, cfg, out_dir=out)
    report.save_json(out / "report.json")
    (out / "losses.csv").write_text(report.losses_csv())
    if cfg.mkt_enabled:
        (out / "alpha_beta.csv").write_text(alpha_beta_trace(report))
    _echo_config(out, {"train": cfg})
    print(f"best epoch {report.best_epoch}: val mIoU {report.best_miou:.2f}")
    print(f"report and checkpoint written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    _refuse_overwrite([out / "metrics.json", out / "metrics.csv"], args.force)
    metrics = evaluate(model, corpus)
    out.mkdir(parents=True, exist_ok=True)
    flat = metrics.as_flat_dict()
    (out / "metrics.json").write_text(json.dumps(flat, indent=2, sort_keys=True))
    (out / "metrics.csv").write_text(metrics.csv_header() + "\n" + metrics.csv_row() + "\n")
    for key in sorted(flat):
        print(f"{key}: {flat[key]:.2f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds needs at least one integer")
    corpus_train = load_corpus(args.train_corpus)
    corpus_val = load_corpus(args.val_corpus)
    out = Path(args.out)
    _refuse_overwrite([out / "ablation.csv"], args.force)
    result = ablate(corpus_train, corpus_val, cfg, seeds)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(result.to_csv())
    for (seed, mkt), report in result.reports.items():
        tag = "mkt" if mkt else "no_mkt"
        report.save_json(out / f"report_seed{seed}_{tag}.json")
    _echo_config(out, {"train": cfg})
    print(result.to_csv())
    return EXIT_OK


def cmd_trace(args) -> int:
    report = TrainReport.load_json(args.report)
    out = Path(args.out)
    _refuse_overwrite([out], args.force)
    try:
        csv_text = alpha_beta_trace(report)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(f"wrote {len(report.epochs)} trace rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="valoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help=f"YAML config (default: ${CONFIG_ENV_VAR})")
        p.add_argument("--seed", default=None, type=int)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("generate", help="write a synthetic corpus file")
    common(p)
    p.add_argument("--out", required=True, help="corpus file to write")
    _add_override_flags(p, GenConfig, skip=("seed",))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a corpus and write report + checkpoint")
    common(p)
    p.add_argument("--train-corpus", required=True)
    p.add_argument("--val-corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-mkt", action="store_true", help="disable mutual knowledge transfer")
    _add_override_flags(p, TrainConfig, skip=("mkt_enabled", "seed"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the mutual-transfer ablation over seeds")
    common(p)
    p.add_argument("--train-corpus", required=True)
    p.add_argument("--val-corpus", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-mkt", action="store_true", help=argparse.SUPPRESS)
    _add_override_flags(p, TrainConfig, skip=("mkt_enabled", "seed"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", help="export the alpha/beta trace of a training report")
    common(p)
    p.add_argument("--report", required=True, help="report.json from a training run")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ManifestMismatchError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
