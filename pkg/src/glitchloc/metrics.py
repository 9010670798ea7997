"""Temporal IoU, AP at fixed IoU thresholds, AR@N over an IoU sweep, and AUC."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

AP_THRESHOLDS = (0.5, 0.75, 0.95)
AR_COUNTS = (100, 50, 20, 10)
AR_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))


def temporal_iou(a: Sequence[float], b: Sequence[float]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return float(inter / union)


def _sorted_predictions(predictions):
    # (video_id, start, end, score) tuples or objects with those attributes
    rows = [tuple(p)[:4] for p in predictions]
    return sorted(rows, key=lambda r: (-r[3], r[0], r[1], r[2]))


def _greedy_match(segment, candidates, used, threshold) -> int:
    """Index of the unmatched GT with the highest IoU >= threshold, or -1."""
    best, best_iou = -1, threshold
    for k, gt in enumerate(candidates):
        if used[k]:
            continue
        iou = temporal_iou(segment, gt)
        if iou >= best_iou and (best < 0 or iou > best_iou):
            best, best_iou = k, iou
    return best


def average_precision(
    predictions: Iterable,
    ground_truth: Mapping[str, Sequence[Sequence[float]]],
    iou_threshold: float,
) -> float:
    """All-point interpolated AP with greedy one-to-one matching.

    Predictions are ranked by score (ties: video id, start, end). Returns 0
    when there is no ground truth at all.
    """
    n_gt = sum(len(v) for v in ground_truth.values())
    if n_gt == 0:
        return 0.0
    used = {vid: [False] * len(segs) for vid, segs in ground_truth.items()}
    rows = _sorted_predictions(predictions)
    if not rows:
        return 0.0
    tp = np.zeros(len(rows))
    for i, (vid, start, end, _) in enumerate(rows):
        gts = ground_truth.get(vid, ())
        k = _greedy_match((start, end), gts, used.get(vid, []), iou_threshold)
        if k >= 0:
            used[vid][k] = True
            tp[i] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(rows) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def _top_n(rows, n):
    per_video: dict[str, list] = {}
    for r in rows:
        per_video.setdefault(r[0], []).append(r)
    return {vid: lst[:n] for vid, lst in per_video.items()}


def average_recall_at_n(
    proposals: Iterable,
    ground_truth: Mapping[str, Sequence[Sequence[float]]],
    n: int,
    thresholds: Sequence[float] = AR_THRESHOLDS,
) -> float:
    """Mean over IoU thresholds and over videos with GT of top-``n`` recall."""
    if n < 1:
        raise ValueError("n must be >= 1")
    top = _top_n(_sorted_predictions(proposals), n)
    per_video = []
    for vid, gts in ground_truth.items():
        if not gts:
            continue
        recalls = []
        for thr in thresholds:
            used = [False] * len(gts)
            for _, start, end, _ in top.get(vid, ()):
                k = _greedy_match((start, end), gts, used, thr)
                if k >= 0:
                    used[k] = True
            recalls.append(sum(used) / len(gts))
        per_video.append(np.mean(recalls))
    return float(np.mean(per_video)) if per_video else 0.0


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC as P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != len(labels):
        raise ValueError("auc needs binary labels with both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    ap: dict[float, float] = field(default_factory=dict)
    ar: dict[int, float] = field(default_factory=dict)
    auc: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ap": {f"{k:g}": v for k, v in self.ap.items()},
            "ar": {str(k): v for k, v in self.ar.items()},
            "auc": self.auc,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        unknown = set(obj) - {"ap", "ar", "auc", "diagnostics"}
        if unknown:
            raise ValueError(f"unknown report keys {sorted(unknown)}")
        report = cls(
            ap={float(k): float(v) for k, v in obj["ap"].items()},
            ar={int(k): float(v) for k, v in obj["ar"].items()},
            auc=None if obj.get("auc") is None else float(obj["auc"]),
            diagnostics=dict(obj.get("diagnostics", {})),
        )
        for v in list(report.ap.values()) + list(report.ar.values()) + ([report.auc] if report.auc is not None else []):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"report value {v} outside [0, 1]")
        return report

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Plain-text row in the AP@0.5/0.75/0.95 | AR@100/50/20/10 layout (percent)."""
        ap_cols = [f"AP@{t:g}" for t in self.ap]
        ar_cols = [f"AR@{n}" for n in self.ar]
        widths = [max(len(c), 6) for c in ap_cols + ar_cols]
        head = " | ".join(
            [" ".join(c.rjust(w) for c, w in zip(ap_cols, widths)),
             " ".join(c.rjust(w) for c, w in zip(ar_cols, widths[len(ap_cols):]))]
        )
        vals = [f"{100 * v:.2f}" for v in list(self.ap.values()) + list(self.ar.values())]
        row = " | ".join(
            [" ".join(v.rjust(w) for v, w in zip(vals[: len(ap_cols)], widths)),
             " ".join(v.rjust(w) for v, w in zip(vals[len(ap_cols):], widths[len(ap_cols):]))]
        )
        lines = [head, "-" * len(head), row]
        if self.auc is not None:
            lines.append(f"AUC: {self.auc:.4f}")
        return "\n".join(lines)


def evaluate_detections(
    proposals: Sequence,
    ground_truth: Mapping[str, Sequence[Sequence[float]]],
    ap_thresholds: Sequence[float] = AP_THRESHOLDS,
    ar_counts: Sequence[int] = AR_COUNTS,
) -> EvalReport:
    report = EvalReport(
        ap={t: average_precision(proposals, ground_truth, t) for t in ap_thresholds},
        ar={n: average_recall_at_n(proposals, ground_truth, n) for n in ar_counts},
    )
    n_gt = sum(len(v) for v in ground_truth.values())
    report.diagnostics = {
        "n_videos": len(ground_truth),
        "n_ground_truth": n_gt,
        "n_videos_without_ground_truth": sum(1 for v in ground_truth.values() if not v),
        "n_proposals": len(proposals),
        "empty_ground_truth": n_gt == 0,
    }
    return report
