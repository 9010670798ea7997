"""Inference post-processing: map averaging, proposal decoding, Soft-NMS, video scores."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .metrics import average_precision
from .optim import Adam


class Proposal(NamedTuple):
    video_id: str
    start: int  # first frame
    end: int  # one past the last frame
    score: float

    @property
    def extent(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class NmsConfig:
    sigma: float = 0.5
    score_floor: float = 1e-3
    max_output: int = 100

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.score_floor < 1:
            raise ValueError("score_floor must lie in [0, 1)")
        if self.max_output < 1:
            raise ValueError("max_output must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


DEFAULT_SIGMAS = (0.05, 0.1, 0.25, 0.5, 1.0)
DEFAULT_FLOORS = (1e-4, 1e-3, 1e-2)


def default_nms_grid(max_output: int = 100) -> list[NmsConfig]:
    return [NmsConfig(s, f, max_output) for s in DEFAULT_SIGMAS for f in DEFAULT_FLOORS]


def average_maps(map_p, map_c, map_pc) -> np.ndarray:
    maps = [np.asarray(m, dtype=np.float64) for m in (map_p, map_c, map_pc)]
    if len({m.shape for m in maps}) != 1:
        raise ad.ShapeError("average_maps", *[m.shape for m in maps])
    # offsets from the first map keep identical inputs exact
    return maps[0] + ((maps[1] - maps[0]) + (maps[2] - maps[0])) / 3.0


def _rank_key(p: Proposal):
    return (-p.score, p.start, p.end - p.start)


def extract_proposals(
    bm: np.ndarray, n_frames: int, top_k: int = 100, min_score: float = 1e-3, video_id: str = ""
) -> list[Proposal]:
    """Every in-clip cell scoring >= min_score, as frames [j, j+i+1), best first."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    D, T = bm.shape
    durations, starts = np.nonzero(
        ((np.arange(T)[None, :] + np.arange(D)[:, None]) <= n_frames - 1) & (bm >= min_score)
    )
    props = [
        Proposal(video_id, int(j), int(j + i + 1), float(bm[i, j])) for i, j in zip(durations, starts)
    ]
    props.sort(key=_rank_key)
    return props[:top_k]


def merge_duplicates(proposals: Iterable[Proposal]) -> list[Proposal]:
    """Keep one proposal per extent, with the highest score."""
    best: dict[tuple, Proposal] = {}
    for p in proposals:
        key = (p.video_id, p.start, p.end)
        if key not in best or p.score > best[key].score:
            best[key] = p
    return sorted(best.values(), key=_rank_key)


def soft_nms(proposals: Sequence[Proposal], config: NmsConfig) -> list[Proposal]:
    """Gaussian Soft-NMS: decay overlapping scores by exp(-IoU^2 / sigma)."""
    pool = sorted(proposals, key=_rank_key)
    if not pool:
        return []
    vids = [p.video_id for p in pool]
    starts = np.array([p.start for p in pool], dtype=np.float64)
    ends = np.array([p.end for p in pool], dtype=np.float64)
    scores = np.array([p.score for p in pool], dtype=np.float64)
    alive = np.ones(len(pool), dtype=bool)
    kept: list[Proposal] = []
    while alive.any() and len(kept) < config.max_output:
        cand = np.flatnonzero(alive)
        order = np.lexsort((ends[cand] - starts[cand], starts[cand], -scores[cand]))
        k = cand[order[0]]
        if scores[k] < config.score_floor:
            break
        alive[k] = False
        kept.append(Proposal(vids[k], int(starts[k]), int(ends[k]), float(scores[k])))
        inter = np.clip(np.minimum(ends, ends[k]) - np.maximum(starts, starts[k]), 0.0, None)
        union = (ends - starts) + (ends[k] - starts[k]) - inter
        iou = inter / union
        scores = np.where(alive, scores * np.exp(-(iou * iou) / config.sigma), scores)
    return kept


def frame_run_proposals(
    scores: np.ndarray, n_frames: int, threshold: float = 0.5, min_run: int = 2, video_id: str = ""
) -> list[Proposal]:
    """Group consecutive frames scoring >= threshold into proposals (mean score)."""
    props = []
    active = np.asarray(scores[:n_frames]) >= threshold
    k = 0
    while k < n_frames:
        if not active[k]:
            k += 1
            continue
        j = k
        while j < n_frames and active[j]:
            j += 1
        if j - k >= min_run:
            props.append(Proposal(video_id, k, j, float(np.mean(scores[k:j]))))
        k = j
    return sorted(props, key=_rank_key)


def detect(bm: np.ndarray, n_frames: int, nms: NmsConfig, video_id: str = "",
           top_k: int = 1000, min_score: float = 1e-3) -> list[Proposal]:
    return soft_nms(merge_duplicates(extract_proposals(bm, n_frames, top_k, min_score, video_id)), nms)


def proposals_to_jsonl(proposals: Iterable[Proposal], fps: float) -> str:
    lines = [
        json.dumps({"video_id": p.video_id, "start_s": p.start / fps, "end_s": p.end / fps, "score": p.score})
        for p in proposals
    ]
    return "".join(line + "\n" for line in lines)


def tune_nms(
    maps: Sequence[tuple[str, np.ndarray, int]],
    ground_truth: dict[str, list[tuple[int, int]]],
    grid: Sequence[NmsConfig],
    iou_threshold: float = 0.5,
    top_k: int = 1000,
    min_score: float = 1e-3,
) -> tuple[NmsConfig, list[float]]:
    """Grid config with the best validation AP@0.5 (first one wins ties)."""
    if not grid:
        raise ValueError("empty NMS grid")
    if not maps:
        raise ValueError("empty validation set")
    candidates = {vid: extract_proposals(bm, n, top_k, min_score, vid) for vid, bm, n in maps}
    scores = []
    for cfg in grid:
        props = [p for vid, _, _ in maps for p in soft_nms(merge_duplicates(candidates[vid]), cfg)]
        scores.append(average_precision(props, ground_truth, iou_threshold))
    best = int(np.argmax(scores))
    return grid[best], scores


# ---------------------------------------------------------------------------
# video-level classification


def pool_map(bm: np.ndarray, n_frames: int, top_k: int = 3) -> np.ndarray:
    """Per-duration max, mean and top-k mean over in-clip cells -> (3 * D,)."""
    D, T = bm.shape
    feats = []
    for i in range(D):
        row = bm[i, : max(n_frames - i, 0)]
        if row.size == 0:
            feats.extend([0.0, 0.0, 0.0])
            continue
        top = np.sort(row)[::-1][:top_k]
        feats.extend([row.max(), row.mean(), top.mean()])
    return np.array(feats)


class UntrainedHeadError(RuntimeError):
    pass


class VideoScoreHead:
    """Two-layer perceptron mapping pooled boundary-map statistics to P(fake)."""

    def __init__(self, n_features: int, hidden: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        b1 = 1.0 / math.sqrt(n_features)
        b2 = 1.0 / math.sqrt(hidden)
        self.params = {
            "w1": ad.parameter(rng.uniform(-b1, b1, (n_features, hidden))),
            "b1": ad.parameter(np.zeros(hidden)),
            "w2": ad.parameter(rng.uniform(-b2, b2, (hidden, 1))),
            "b2": ad.parameter(np.zeros(1)),
        }
        self.mean = np.zeros(n_features)
        self.scale = np.ones(n_features)
        self.trained = False

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "VideoScoreHead":
        head = cls(state["w1"].shape[0], state["w1"].shape[1])
        for k in ("w1", "b1", "w2", "b2"):
            head.params[k].value = np.array(state[k], dtype=np.float64)
        head.mean = np.array(state.get("mean", np.zeros(head.mean.shape)))
        head.scale = np.array(state.get("scale", np.ones(head.scale.shape)))
        head.trained = True
        return head

    def state(self) -> dict[str, np.ndarray]:
        out = {k: p.value.copy() for k, p in self.params.items()}
        out["mean"], out["scale"] = self.mean.copy(), self.scale.copy()
        return out

    def _forward(self, x) -> ad.DiffArray:
        p = self.params
        h = ad.relu(ad.matmul(ad.as_array((x - self.mean) / self.scale), p["w1"]) + p["b1"])
        return ad.sigmoid(ad.matmul(h, p["w2"]) + p["b2"])

    def fit(self, features: np.ndarray, labels: np.ndarray, epochs: int = 300, lr: float = 1e-2):
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.float64)[:, None]
        self.mean = x.mean(axis=0)
        self.scale = np.where(x.std(axis=0) > 1e-8, x.std(axis=0), 1.0)
        opt = Adam(self.params, lr=lr)
        for _ in range(epochs):
            opt.zero_grad()
            loss = ad.mean(ad.binary_cross_entropy(self._forward(x), y))
            loss.backward()
            opt.step()
        self.trained = True
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise UntrainedHeadError("video score head has not been trained")
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return self._forward(x).value[:, 0]


def video_score(bm: np.ndarray, n_frames: int, head: VideoScoreHead) -> float:
    return float(head.predict(pool_map(bm, n_frames))[0])
