"""Command-line entry point: generate, train, eval, detect, tune-nms.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import os
import sys

# Cap BLAS threads before numpy loads.
if os.environ.get("GLITCHLOC_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["GLITCHLOC_THREADS"])

import argparse
import dataclasses
import json
import logging
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .annotations import AnnotationError, load_annotations
from .losses import LossWeights
from .model import ModelConfig
from .model.checkpoint import CheckpointError
from .postproc import NmsConfig, default_nms_grid, proposals_to_jsonl, tune_nms
from .synthgen import ClipFormatError, GeneratorConfig, dataset_statistics, generate_dataset, read_clip
from .trainer import (
    ClipBank,
    NumericError,
    Predictor,
    TrainConfig,
    evaluate,
    ground_truth_frames,
    load_bank,
    shuffled_baseline,
    train,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
_SHAPE_FIELDS = ("T", "D", "n_mels", "audio_steps", "visual_channels")


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    dataset: str = "data"
    run_dir: str = "run"

    def to_json(self) -> dict:
        train = dataclasses.asdict(self.train)
        for key in ("model", "nms"):
            train.pop(key)
        return {
            "generator": self.generator.to_json(),
            "model": self.model.to_json(),
            "train": train,
            "nms": self.nms.to_json(),
            "paths": {"dataset": self.dataset, "run_dir": self.run_dir},
        }


# ---------------------------------------------------------------------------
# config parsing


def _check_type(path: str, value, hint):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        options = typing.get_args(hint)
        if value is None and type(None) in options:
            return value
        hint = next(o for o in options if o is not type(None))
        origin = typing.get_origin(hint)
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    elif hint is dict or origin is dict:
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {getattr(hint, '__name__', hint)}, got {value!r}")
    return value


def _build(cls, obj, path: str, skip=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {k: _check_type(f"{path}.{k}", v, hints[k]) for k, v in obj.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_run_config(obj: dict) -> RunConfig:
    """Validate a whole run document; every error is a ConfigError."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(obj) - {"generator", "model", "train", "nms", "paths"})
    if unknown:
        raise ConfigError(f"unknown sections {unknown}")
    gen = _build(GeneratorConfig, obj.get("generator", {}), "generator")
    model_obj = dict(obj.get("model", {}))
    for name in _SHAPE_FIELDS:
        if name in model_obj and model_obj[name] != getattr(gen, name):
            raise ConfigError(f"model.{name}={model_obj[name]} disagrees with generator.{name}={getattr(gen, name)}")
        model_obj[name] = getattr(gen, name)
    model = _build(ModelConfig, model_obj, "model")
    train_obj = dict(obj.get("train", {}))
    weights = _build(LossWeights, train_obj.pop("weights", {}), "train.weights")
    nms = _build(NmsConfig, obj.get("nms", {}), "nms")
    train_cfg = _build(TrainConfig, train_obj, "train", skip=("weights", "model", "nms"))
    train_cfg.weights, train_cfg.model, train_cfg.nms = weights, model, nms
    paths = obj.get("paths", {})
    if not isinstance(paths, dict) or set(paths) - {"dataset", "run_dir"}:
        raise ConfigError("paths: only 'dataset' and 'run_dir' are allowed")
    for key, value in paths.items():
        if not isinstance(value, str) or not value:
            raise ConfigError(f"paths.{key}: expected a non-empty string")
    cfg = RunConfig(gen, model, train_cfg, nms, paths.get("dataset", "data"), paths.get("run_dir", "run"))
    try:
        gen.validate()
        train_cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(obj: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` assignments (values parsed as JSON when possible)."""
    obj = json.loads(json.dumps(obj))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"bad --set key {key!r}")
        node = obj
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part} is not a section")
        node[parts[-1]] = _parse_value(raw)
    return obj


def load_run_config(path: str | None, overrides: list[str], seed: int | None = None) -> RunConfig:
    obj: dict = {}
    if path:
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    obj = apply_overrides(obj, overrides)
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        for section in ("generator", "model", "train"):
            obj.setdefault(section, {})["seed"] = seed
    return parse_run_config(obj)


# ---------------------------------------------------------------------------
# commands


def _write(path: str | None, text: str):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args, cfg: RunConfig) -> int:
    out = args.out or cfg.dataset
    dataset = generate_dataset(cfg.generator, out)
    stats = dataset_statistics(dataset)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = args.out or cfg.run_dir
    dataset = args.dataset or cfg.dataset
    train(dataset, cfg.train, out, resume=args.resume)
    print(f"wrote {Path(out) / 'final.ckpt'}")
    return EXIT_OK


def _predictor(args, cfg: RunConfig) -> Predictor:
    if args.oracle:
        return Predictor({"kind": "oracle", "model": cfg.model.to_json(), "nms": cfg.nms.to_json()}, {})
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required (or --oracle)")
    return Predictor.load(args.checkpoint)


def cmd_eval(args, cfg: RunConfig) -> int:
    predictor = _predictor(args, cfg)
    dataset = args.dataset or cfg.dataset
    if args.baseline:
        report = shuffled_baseline(predictor, dataset, args.split, seed=cfg.train.seed)
    else:
        report = evaluate(predictor, dataset, args.split)
    if args.out:
        Path(args.out).write_text(report.dumps() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    if not args.clip:
        raise ConfigError("--clip is required")
    predictor = _predictor(args, cfg)
    clip_path = Path(args.clip)
    manifest = Path(args.dataset or cfg.dataset) / "manifest.json"
    records = load_annotations(manifest).by_id()
    if clip_path.stem not in records:
        raise DataError(f"clip {clip_path.stem!r} is not listed in {manifest}")
    record = records[clip_path.stem]
    clip = read_clip(clip_path, record)
    bank = ClipBank([record], clip.visual[None], clip.audio[None])
    inferred = predictor.infer(bank)
    props = predictor.proposals(bank, inferred=inferred)
    _write(args.out, proposals_to_jsonl(props, record.fps))
    return EXIT_OK


def cmd_tune_nms(args, cfg: RunConfig) -> int:
    predictor = _predictor(args, cfg)
    bank = load_bank(args.dataset or cfg.dataset, args.split)
    maps = predictor.infer(bank)["maps"]
    best, scores = tune_nms(
        [(r.id, maps[k], r.n_frames) for k, r in enumerate(bank.records)],
        ground_truth_frames(bank.records),
        default_nms_grid(cfg.nms.max_output),
    )
    grid = default_nms_grid(cfg.nms.max_output)
    result = {
        "best": best.to_json(),
        "grid": [{**g.to_json(), "ap50": s} for g, s in zip(grid, scores)],
    }
    _write(args.out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "detect": cmd_detect,
    "tune-nms": cmd_tune_nms,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glitchloc", description="Temporal forgery localization toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="overrides every section's seed")
    common.add_argument("--out", help="output path (directory or file, per command)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. train.epochs=5 (repeatable)")
    common.add_argument("--dataset", help="dataset directory (defaults to paths.dataset)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthesize a labeled dataset")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--resume", help="checkpoint to resume from")
    for name, default_split, text in (("eval", "test", "evaluate a checkpoint"),
                                      ("tune-nms", "validation", "grid-search Soft-NMS parameters")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint")
        p.add_argument("--oracle", action="store_true", help="use the ground-truth map emitter")
        p.add_argument("--split", default=default_split, choices=("train", "validation", "test"))
        if name == "eval":
            p.add_argument("--baseline", action="store_true", help="shuffled-proposal baseline")
    p = sub.add_parser("detect", parents=[common], help="localize fake segments in one clip")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--clip", help="clip file (.glch); its stem must be a manifest record id")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, args.set, args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, AnnotationError, ClipFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
