"""Training loop, checkpointing and evaluation of the localization model."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import Dataset, VideoRecord, gt_boundary_map, load_annotations, stack_labels
from .losses import LossWeights, compute_losses
from .metrics import EvalReport, auc, average_precision, evaluate_detections
from .model import BoundaryAwareDetector, ModelConfig
from .model.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, AdamState
from .postproc import (
    NmsConfig,
    Proposal,
    VideoScoreHead,
    default_nms_grid,
    detect,
    frame_run_proposals,
    pool_map,
    tune_nms,
)
from .synthgen.clips import read_clip, stable_seed

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    frame_threshold: float = 0.5
    frame_min_run: int = 2
    head_epochs: int = 300

    def validate(self):
        for name in ("epochs", "batch_size", "checkpoint_interval", "head_epochs", "frame_min_run"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if not 0 < self.frame_threshold < 1:
            raise ValueError("frame_threshold must lie in (0, 1)")
        self.weights.validate()
        self.model.validate()

    @property
    def uses_boundary(self) -> bool:
        return self.weights.boundary > 0 or self.weights.multimodal_boundary > 0


# ---------------------------------------------------------------------------
# data


@dataclass
class ClipBank:
    """All clips of a dataset held in memory as stacked arrays."""

    records: list[VideoRecord]
    visual: np.ndarray
    audio: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return np.array([r.n_frames for r in self.records])

    def subset(self, split: str) -> "ClipBank":
        idx = [i for i, r in enumerate(self.records) if r.split == split]
        return ClipBank([self.records[i] for i in idx], self.visual[idx], self.audio[idx])

    def __len__(self):
        return len(self.records)


def load_bank(dataset_dir: str | Path, split: str | None = None) -> ClipBank:
    root = Path(dataset_dir)
    dataset = load_annotations(root / "manifest.json")
    records = [r for r in dataset if split is None or r.split == split]
    clips = [read_clip(root / "clips" / f"{r.id}.glch", r) for r in records]
    if not clips:
        return ClipBank(records, np.zeros((0, 0, 0)), np.zeros((0, 0, 0)))
    return ClipBank(records, np.stack([c.visual for c in clips]), np.stack([c.audio for c in clips]))


def ground_truth_frames(records: Sequence[VideoRecord]) -> dict[str, list[tuple[int, int]]]:
    return {
        r.id: [(first, min(stop, r.n_frames)) for first, stop in r.segment_frames()] for r in records
    }


# ---------------------------------------------------------------------------
# checkpoints


def _model_arrays(model: BoundaryAwareDetector) -> dict[str, np.ndarray]:
    return {f"model.{k}": v for k, v in model.state_dict().items()}


def write_checkpoint(path, model: BoundaryAwareDetector, config: TrainConfig, *, epoch: int,
                     opt: Adam | None = None, head: VideoScoreHead | None = None,
                     nms: NmsConfig | None = None):
    arrays = _model_arrays(model)
    meta = {
        "kind": "model",
        "model": model.config.to_json(),
        "train": train_config_to_json(config),
        "epoch": epoch,
        "adam_step": opt.state.step if opt else 0,
        "nms": (nms or config.nms).to_json(),
        "has_head": head is not None,
    }
    if opt is not None:
        for k in opt.state.m:
            arrays[f"adam.m.{k}"] = opt.state.m[k]
            arrays[f"adam.v.{k}"] = opt.state.v[k]
    if head is not None:
        arrays.update({f"head.{k}": v for k, v in head.state().items()})
    save_checkpoint(path, meta, arrays)


def write_oracle_checkpoint(path, model_config: ModelConfig, nms: NmsConfig | None = None):
    """A checkpoint whose "model" emits ground-truth boundary maps (plumbing checks)."""
    meta = {"kind": "oracle", "model": model_config.to_json(), "nms": (nms or NmsConfig()).to_json(),
            "has_head": False, "epoch": 0, "adam_step": 0}
    save_checkpoint(path, meta, {})


def train_config_to_json(config: TrainConfig) -> dict:
    out = asdict(config)
    out["weights"] = config.weights.to_json()
    out["model"] = config.model.to_json()
    out["nms"] = config.nms.to_json()
    return out


def train_config_from_json(obj: dict) -> TrainConfig:
    obj = dict(obj)
    weights = LossWeights(**obj.pop("weights", {}))
    model = ModelConfig(**obj.pop("model", {}))
    nms = NmsConfig(**obj.pop("nms", {}))
    return TrainConfig(weights=weights, model=model, nms=nms, **obj)


class Predictor:
    """Uniform inference interface over a trained model or the ground-truth oracle."""

    def __init__(self, meta: dict, arrays: dict[str, np.ndarray]):
        self.meta = meta
        self.kind = meta.get("kind", "model")
        self.model_config = ModelConfig(**meta["model"])
        self.nms = NmsConfig(**meta.get("nms", {}))
        self.train_config = train_config_from_json(meta["train"]) if "train" in meta else None
        self.model = None
        if self.kind == "model":
            self.model = BoundaryAwareDetector(self.model_config)
            self.model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
        elif self.kind != "oracle":
            raise CheckpointError(f"unknown checkpoint kind {self.kind!r}")
        head_state = {k[5:]: v for k, v in arrays.items() if k.startswith("head.")}
        self.head = VideoScoreHead.from_state(head_state) if head_state else None

    @classmethod
    def load(cls, path, expect_model: dict | None = None) -> "Predictor":
        meta, arrays = load_checkpoint(path, expect_model)
        return cls(meta, arrays)

    @property
    def frame_only(self) -> bool:
        return self.train_config is not None and not self.train_config.uses_boundary

    def infer(self, bank: ClipBank, batch_size: int = 16) -> dict[str, np.ndarray]:
        """Averaged fused maps (N, D, T) and per-frame fake scores (N, T)."""
        cfg = self.model_config
        if self.kind == "oracle":
            maps = np.stack([gt_boundary_map(r, None, cfg.D, cfg.T) for r in bank.records]) if len(bank) else np.zeros((0, cfg.D, cfg.T))
            frames = np.stack([np.maximum(*_oracle_frames(r, cfg.T)) for r in bank.records]) if len(bank) else np.zeros((0, cfg.T))
            return {"maps": maps, "frames": frames}
        maps, frames = [], []
        params = self.model.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            for lo in range(0, len(bank), batch_size):
                sl = slice(lo, lo + batch_size)
                out = self.model(bank.visual[sl], bank.audio[sl], bank.lengths[sl])
                maps.append(out.averaged_map())
                frames.append(np.maximum(out.frame_visual.value, out.frame_audio.value))
        finally:
            for p, flag in zip(params, flags):
                p.requires_grad = flag
        return {"maps": np.concatenate(maps), "frames": np.concatenate(frames)}

    def proposals(self, bank: ClipBank, nms: NmsConfig | None = None, inferred=None) -> list[Proposal]:
        nms = nms or self.nms
        inferred = inferred or self.infer(bank)
        out: list[Proposal] = []
        for k, r in enumerate(bank.records):
            if self.frame_only:
                tc = self.train_config
                out.extend(frame_run_proposals(inferred["frames"][k], r.n_frames, tc.frame_threshold,
                                               tc.frame_min_run, r.id))
            else:
                out.extend(detect(inferred["maps"][k], r.n_frames, nms, r.id))
        return out


def _oracle_frames(record: VideoRecord, T: int):
    from .annotations import frame_labels

    return frame_labels(record, "visual", T), frame_labels(record, "audio", T)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def epoch_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]


def _batch_targets(records, config: ModelConfig) -> dict:
    return stack_labels(records, config.D, config.T)


def validation_ap(predictor_like, bank: ClipBank, nms: NmsConfig) -> float:
    props = predictor_like.proposals(bank, nms)
    return average_precision(props, ground_truth_frames(bank.records), 0.5)


class _LivePredictor(Predictor):
    """Predictor view over an in-training model (no checkpoint round trip)."""

    def __init__(self, model: BoundaryAwareDetector, config: TrainConfig):
        self.meta = {}
        self.kind = "model"
        self.model_config = model.config
        self.nms = config.nms
        self.train_config = config
        self.model = model
        self.head = None


def train(
    dataset_dir: str | Path,
    config: TrainConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    bank: ClipBank | None = None,
) -> tuple[BoundaryAwareDetector, TrainLog]:
    """Optimize the model on the train split; writes checkpoints and a JSONL log to ``out_dir``.

    Files: ``last.ckpt`` (every ``checkpoint_interval`` epochs), ``final.ckpt``
    (with tuned Soft-NMS and the video-score head) and ``train_log.jsonl``.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank = bank or load_bank(dataset_dir)
    train_bank = bank.subset("train")
    val_bank = bank.subset("validation")
    if not len(train_bank) or not len(val_bank):
        raise ValueError("dataset needs non-empty train and validation splits")
    mcfg = config.model
    if train_bank.visual.shape[1:] != (mcfg.visual_channels, mcfg.T) or train_bank.audio.shape[1] != mcfg.audio_rows:
        raise ValueError(
            f"clip shapes {train_bank.visual.shape[1:]}/{train_bank.audio.shape[1:]} do not match the model config"
        )

    model = BoundaryAwareDetector(mcfg)
    opt = Adam(model.named_parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)
    start_epoch = 0
    log_path = out / "train_log.jsonl"
    history = TrainLog()
    if resume is not None:
        meta, arrays = load_checkpoint(resume, expect_model=mcfg.to_json())
        model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
        opt.state = AdamState(
            meta["adam_step"],
            {k[7:]: v for k, v in arrays.items() if k.startswith("adam.m.")},
            {k[7:]: v for k, v in arrays.items() if k.startswith("adam.v.")},
        )
        start_epoch = meta["epoch"]
        if log_path.exists():
            for line in log_path.read_text().splitlines():
                row = json.loads(line)
                if row["epoch"] < start_epoch:
                    (history.steps if row["type"] == "step" else history.epochs).append(row)
    log_file = log_path.open("w")
    for row in sorted(history.steps + history.epochs, key=lambda r: (r["epoch"], r["type"] == "epoch", r.get("step", 0))):
        log_file.write(json.dumps(row, sort_keys=True) + "\n")

    live = _LivePredictor(model, config)
    n = len(train_bank)
    step = opt.state.step
    try:
        for epoch in range(start_epoch, config.epochs):
            order = np.random.default_rng(stable_seed(config.seed, "epoch", epoch)).permutation(n)
            epoch_losses = []
            for lo in range(0, n, config.batch_size):
                idx = order[lo : lo + config.batch_size]
                records = [train_bank.records[i] for i in idx]
                targets = _batch_targets(records, mcfg)
                outputs = model(train_bank.visual[idx], train_bank.audio[idx], targets["lengths"])
                parts = compute_losses(outputs, targets, config.weights)
                values = parts.values()
                if not all(math.isfinite(v) for v in values.values()):
                    log.error("non-finite loss at epoch %d step %d: %s", epoch, step, values)
                    raise NumericError(f"non-finite loss at epoch {epoch}, step {step}: {values}")
                opt.zero_grad()
                parts.total.backward()
                opt.step()
                step += 1
                row = {"type": "step", "epoch": epoch, "step": step, **values}
                history.steps.append(row)
                log_file.write(json.dumps(row, sort_keys=True) + "\n")
                epoch_losses.append(values["total"])
            val_ap = validation_ap(live, val_bank, config.nms)
            row = {"type": "epoch", "epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_ap50": val_ap}
            history.epochs.append(row)
            log_file.write(json.dumps(row, sort_keys=True) + "\n")
            log_file.flush()
            log.info("epoch %d loss %.5f val AP@0.5 %.4f", epoch, row["train_loss"], val_ap)
            if (epoch + 1) % config.checkpoint_interval == 0 or epoch + 1 == config.epochs:
                write_checkpoint(out / "last.ckpt", model, config, epoch=epoch + 1, opt=opt)
    finally:
        log_file.close()

    # post-training: tune Soft-NMS on validation, fit the video-level head on train
    val_inferred = live.infer(val_bank)
    best_nms = config.nms
    if config.uses_boundary:
        maps = [(r.id, val_inferred["maps"][k], r.n_frames) for k, r in enumerate(val_bank.records)]
        best_nms, _ = tune_nms(maps, ground_truth_frames(val_bank.records), default_nms_grid(config.nms.max_output))
    head = fit_video_head(live.infer(train_bank), train_bank, config)
    write_checkpoint(out / "final.ckpt", model, config, epoch=config.epochs, opt=opt, head=head, nms=best_nms)
    return model, history


def fit_video_head(inferred: dict, bank: ClipBank, config: TrainConfig) -> VideoScoreHead | None:
    labels = np.array([int(r.is_fake) for r in bank.records])
    if labels.min() == labels.max():
        return None
    feats = np.stack([pool_map(inferred["maps"][k], r.n_frames) for k, r in enumerate(bank.records)])
    head = VideoScoreHead(feats.shape[1], seed=config.seed)
    return head.fit(feats, labels, epochs=config.head_epochs)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    checkpoint: str | Path | Predictor,
    dataset_dir: str | Path | None,
    split: str = "test",
    nms: NmsConfig | None = None,
    bank: ClipBank | None = None,
) -> EvalReport:
    """Forward, average maps, decode, Soft-NMS, then AP/AR (+ AUC when a head exists)."""
    predictor = checkpoint if isinstance(checkpoint, Predictor) else Predictor.load(checkpoint)
    bank = bank.subset(split) if bank is not None else load_bank(dataset_dir, split)
    if not len(bank):
        raise ValueError(f"split {split!r} is empty")
    cfg = predictor.model_config
    if bank.visual.shape[1:] != (cfg.visual_channels, cfg.T):
        raise CheckpointError("checkpoint config does not match the dataset's clip shapes")
    inferred = predictor.infer(bank)
    props = predictor.proposals(bank, nms, inferred)
    report = evaluate_detections(props, ground_truth_frames(bank.records))
    if predictor.head is not None:
        labels = np.array([int(r.is_fake) for r in bank.records])
        if 0 < labels.sum() < len(labels):
            feats = np.stack([pool_map(inferred["maps"][k], r.n_frames) for k, r in enumerate(bank.records)])
            report.auc = auc(predictor.head.predict(feats), labels)
    report.diagnostics["split"] = split
    report.diagnostics["nms"] = (nms or predictor.nms).to_json()
    return report


def shuffled_baseline(checkpoint, dataset_dir=None, split: str = "test", nms: NmsConfig | None = None,
                      seed: int = 0, bank: ClipBank | None = None) -> EvalReport:
    """Same pipeline with each video's in-clip map cells randomly permuted."""
    predictor = checkpoint if isinstance(checkpoint, Predictor) else Predictor.load(checkpoint)
    bank = bank.subset(split) if bank is not None else load_bank(dataset_dir, split)
    inferred = predictor.infer(bank)
    cfg = predictor.model_config
    rng = np.random.default_rng(stable_seed(seed, "shuffle", split))
    maps = inferred["maps"].copy()
    for k, r in enumerate(bank.records):
        valid = (np.arange(cfg.T)[None, :] + np.arange(cfg.D)[:, None]) <= r.n_frames - 1
        cells = maps[k][valid]
        maps[k][valid] = cells[rng.permutation(cells.size)]
    nms = nms or predictor.nms
    props = [p for k, r in enumerate(bank.records) for p in detect(maps[k], r.n_frames, nms, r.id)]
    return evaluate_detections(props, ground_truth_frames(bank.records))
