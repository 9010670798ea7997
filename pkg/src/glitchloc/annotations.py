"""Clip annotations and the ground-truth structures derived from them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "validation", "test")
MODALITIES = ("visual", "audio")

_REQUIRED_KEYS = {"id", "fps", "n_frames", "modify_visual", "modify_audio", "fake_segments", "split"}
_OPTIONAL_KEYS = {"transcript_ops"}
_FRAME_SLACK = 1e-6


class AnnotationError(ValueError):
    """An annotation file or record violates the schema or its invariants."""

    def __init__(self, message: str, record_id: str | None = None):
        self.record_id = record_id
        prefix = f"record {record_id!r}: " if record_id is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class SegmentAnnotation:
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise AnnotationError(f"non-finite segment [{self.start}, {self.end}]")
        if self.start < 0 or self.end <= self.start:
            raise AnnotationError(f"invalid segment [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def frame_span(self, fps: float) -> tuple[int, int]:
        """Half-open frame range [first, stop) touched by this segment.

        A 1e-6-frame slack absorbs float noise in timestamps that were
        computed as frame / fps.
        """
        return math.floor(self.start * fps + _FRAME_SLACK), math.ceil(self.end * fps - _FRAME_SLACK)


@dataclass(frozen=True)
class VideoRecord:
    id: str
    fps: float
    n_frames: int
    modify_visual: bool
    modify_audio: bool
    fake_segments: tuple[SegmentAnnotation, ...] = ()
    split: str = "train"
    transcript_ops: tuple[tuple[int, str, str], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "fake_segments", tuple(self.fake_segments))
        if self.transcript_ops is not None:
            object.__setattr__(self, "transcript_ops", tuple(tuple(op) for op in self.transcript_ops))
        self.validate()

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    @property
    def is_fake(self) -> bool:
        return self.modify_visual or self.modify_audio

    def modified(self, modality: str) -> bool:
        if modality == "visual":
            return self.modify_visual
        if modality == "audio":
            return self.modify_audio
        raise ValueError(f"unknown modality {modality!r}")

    def segment_frames(self) -> list[tuple[int, int]]:
        return [seg.frame_span(self.fps) for seg in self.fake_segments]

    def validate(self):
        rid = self.id
        if not isinstance(self.id, str) or not self.id:
            raise AnnotationError("id must be a non-empty string", rid)
        if not (isinstance(self.fps, (int, float)) and self.fps > 0 and math.isfinite(self.fps)):
            raise AnnotationError(f"fps must be positive, got {self.fps!r}", rid)
        if isinstance(self.n_frames, bool) or not isinstance(self.n_frames, (int, np.integer)) or self.n_frames < 1:
            raise AnnotationError(f"n_frames must be a positive integer, got {self.n_frames!r}", rid)
        if self.split not in SPLITS:
            raise AnnotationError(f"split must be one of {SPLITS}, got {self.split!r}", rid)
        if self.is_fake != bool(self.fake_segments):
            raise AnnotationError("modification flags disagree with fake_segments", rid)
        limit = self.n_frames / self.fps
        prev_end = None
        for seg in self.fake_segments:
            if seg.end > limit + 1e-9:
                raise AnnotationError(f"segment [{seg.start}, {seg.end}] exceeds clip length {limit}", rid)
            if prev_end is not None and seg.start < prev_end:
                raise AnnotationError("fake_segments overlap or are not sorted by start", rid)
            prev_end = seg.end

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "fps": self.fps,
            "n_frames": int(self.n_frames),
            "modify_visual": self.modify_visual,
            "modify_audio": self.modify_audio,
            "fake_segments": [[s.start, s.end] for s in self.fake_segments],
            "split": self.split,
        }
        if self.transcript_ops is not None:
            out["transcript_ops"] = [list(op) for op in self.transcript_ops]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "VideoRecord":
        if not isinstance(obj, dict):
            raise AnnotationError("record must be a JSON object")
        rid = obj.get("id")
        unknown = set(obj) - _REQUIRED_KEYS - _OPTIONAL_KEYS
        if unknown:
            raise AnnotationError(f"unknown keys {sorted(unknown)}", rid)
        missing = _REQUIRED_KEYS - set(obj)
        if missing:
            raise AnnotationError(f"missing keys {sorted(missing)}", rid)
        for key in ("modify_visual", "modify_audio"):
            if not isinstance(obj[key], bool):
                raise AnnotationError(f"{key} must be a boolean", rid)
        segs = obj["fake_segments"]
        if not isinstance(segs, list):
            raise AnnotationError("fake_segments must be a list", rid)
        try:
            segments = []
            for pair in segs:
                if not (isinstance(pair, list) and len(pair) == 2):
                    raise AnnotationError("each fake segment must be [start, end]", rid)
                segments.append(SegmentAnnotation(float(pair[0]), float(pair[1])))
        except AnnotationError as exc:
            if exc.record_id is None:
                raise AnnotationError(str(exc), rid) from None
            raise
        except (TypeError, ValueError):
            raise AnnotationError("fake segment bounds must be numbers", rid) from None
        ops = obj.get("transcript_ops")
        if ops is not None:
            if not isinstance(ops, list) or not all(
                isinstance(op, list) and len(op) == 3 and isinstance(op[0], int)
                and isinstance(op[1], str) and isinstance(op[2], str)
                for op in ops
            ):
                raise AnnotationError("transcript_ops must be [[index, original, replacement], ...]", rid)
            ops = tuple(tuple(op) for op in ops)
        return cls(
            id=rid,
            fps=obj["fps"],
            n_frames=obj["n_frames"],
            modify_visual=obj["modify_visual"],
            modify_audio=obj["modify_audio"],
            fake_segments=tuple(segments),
            split=obj["split"],
            transcript_ops=ops,
        )


@dataclass
class Dataset:
    records: list[VideoRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def frame_counts(self) -> list[int]:
        return [r.n_frames for r in self.records]

    @property
    def total_frames(self) -> int:
        return sum(self.frame_counts)

    def split(self, name: str) -> "Dataset":
        return Dataset([r for r in self.records if r.split == name])

    def by_id(self) -> dict[str, VideoRecord]:
        return {r.id: r for r in self.records}


def load_annotations(path: str | Path) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise AnnotationError(f"annotation file is not UTF-8: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON: {exc}") from None
    if not isinstance(data, list):
        raise AnnotationError("annotation file must hold a JSON array")
    records = [VideoRecord.from_json(obj) for obj in data]
    seen = set()
    for r in records:
        if r.id in seen:
            raise AnnotationError("duplicate id", r.id)
        seen.add(r.id)
    return Dataset(records)


def save_annotations(dataset: Dataset | Iterable[VideoRecord], path: str | Path):
    records = dataset.records if isinstance(dataset, Dataset) else list(dataset)
    payload = [r.to_json() for r in records]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# ground-truth builders


def frame_labels(record: VideoRecord, modality: str, T: int) -> np.ndarray:
    """Per-frame fake labels for one modality, zero-padded to length T."""
    if T < record.n_frames:
        raise ValueError(f"T={T} is shorter than the clip ({record.n_frames} frames)")
    labels = np.zeros(T)
    if not record.modified(modality):
        return labels
    for first, stop in record.segment_frames():
        labels[first : min(stop, record.n_frames)] = 1.0
    return labels


def candidate_iou(start: int, duration: int, gt_first: int, gt_last: int) -> float:
    """IoU of closed frame intervals [start, start+duration] and [gt_first, gt_last]."""
    end = start + duration
    inter = min(end, gt_last) - max(start, gt_first) + 1
    if inter <= 0:
        return 0.0
    union = (end - start + 1) + (gt_last - gt_first + 1) - inter
    return inter / union


def gt_boundary_map(record: VideoRecord, modality: str | None, D: int, T: int) -> np.ndarray:
    """D x T map; cell (i, j) scores the closed candidate [j, j+i] in frames.

    ``modality=None`` gives the modality-agnostic map used for the fused
    outputs. Cells whose candidate runs past the last frame stay 0.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    if T < record.n_frames:
        raise ValueError(f"T={T} is shorter than the clip ({record.n_frames} frames)")
    bm = np.zeros((D, T))
    if modality is not None and not record.modified(modality):
        return bm
    n = record.n_frames
    durations = np.arange(D)[:, None]
    starts = np.arange(T)[None, :]
    ends = starts + durations
    valid = ends <= n - 1
    for first, stop in record.segment_frames():
        last = min(stop, n) - 1
        inter = np.minimum(ends, last) - np.maximum(starts, first) + 1
        inter = np.maximum(inter, 0)
        union = (durations + 1) + (last - first + 1) - inter
        bm = np.maximum(bm, np.where(valid, inter / union, 0.0))
    return bm


def valid_cell_mask(n_frames: int, D: int, T: int) -> np.ndarray:
    """Boolean D x T mask of cells whose candidate fits inside the clip."""
    return (np.arange(T)[None, :] + np.arange(D)[:, None]) <= n_frames - 1


def contrastive_label(record: VideoRecord) -> int:
    """1 for a fully real clip (positive audio-visual pair), else 0."""
    return int(not record.modify_visual and not record.modify_audio)


def decode_peaks(bm: np.ndarray) -> list[tuple[int, int]]:
    """Half-open frame spans of cells equal to 1.0 in a boundary map."""
    durations, starts = np.nonzero(bm == 1.0)
    return sorted((int(j), int(j + i + 1)) for i, j in zip(durations, starts))


def stack_labels(records: Sequence[VideoRecord], D: int, T: int) -> dict[str, np.ndarray]:
    """Batch every per-sample target the training step needs."""
    return {
        "frame_visual": np.stack([frame_labels(r, "visual", T) for r in records]),
        "frame_audio": np.stack([frame_labels(r, "audio", T) for r in records]),
        "bm": np.stack([gt_boundary_map(r, None, D, T) for r in records]),
        "bm_visual": np.stack([gt_boundary_map(r, "visual", D, T) for r in records]),
        "bm_audio": np.stack([gt_boundary_map(r, "audio", D, T) for r in records]),
        "contrastive": np.array([contrastive_label(r) for r in records], dtype=np.float64),
        "lengths": np.array([r.n_frames for r in records]),
    }
