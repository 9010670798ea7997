"""Dataset generation: transcripts, manipulation plans, records and clips."""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..annotations import Dataset, SegmentAnnotation, VideoRecord, save_annotations
from .clips import FeatureClip, render_clip, stable_seed, write_clip
from .transcript import (
    ReplacementPlan,
    SentimentLexicon,
    Token,
    Transcript,
    replacement_budget,
    select_replacements,
)

CATEGORIES = ("real", "visual_only", "audio_only", "both")
_CATEGORY_FLAGS = {
    "real": (False, False),
    "visual_only": (True, False),
    "audio_only": (False, True),
    "both": (True, True),
}

# Token length in frames (1..8 at the default 5 fps, i.e. 0.2 s .. 1.6 s);
# ~90% of the mass sits below one second.
TOKEN_FRAME_PROBS = (0.15, 0.27, 0.28, 0.20, 0.04, 0.03, 0.02, 0.01)
_MAX_TRANSCRIPT_DRAWS = 50


@dataclass
class GeneratorConfig:
    n_train: int = 500
    n_validation: int = 100
    n_test: int = 100
    fps: float = 5.0
    min_frames: int = 30
    T: int = 64
    D: int = 8
    visual_channels: int = 8
    n_mels: int = 16
    audio_steps: int = 4
    amplitude: float = 0.8
    sentiment_rate: float = 0.15
    identities: dict = field(default_factory=lambda: {"train": 20, "validation": 6, "test": 6})
    seed: int = 0

    def validate(self):
        counts = (self.n_train, self.n_validation, self.n_test)
        if any(c < 0 for c in counts) or sum(counts) == 0:
            raise ValueError("split sizes must be >= 0 with a positive total")
        positive = ("fps", "min_frames", "T", "D", "visual_channels", "n_mels", "audio_steps", "amplitude")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_frames > self.T:
            raise ValueError("min_frames must not exceed T")
        if not 0 < self.sentiment_rate <= 1:
            raise ValueError("sentiment_rate must lie in (0, 1]")
        if set(self.identities) != {"train", "validation", "test"} or min(self.identities.values()) < 1:
            raise ValueError("identities needs a positive count for train, validation and test")

    def split_sizes(self) -> dict[str, int]:
        return {"train": self.n_train, "validation": self.n_validation, "test": self.n_test}

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class GeneratedItem:
    record: VideoRecord
    identity: str
    transcript: Transcript
    plan: ReplacementPlan


def random_transcript(rng: np.random.Generator, n_frames: int, fps: float, lexicon: SentimentLexicon,
                      sentiment_rate: float) -> Transcript:
    """Back-to-back word tokens covering ``n_frames``; timestamps sit on the frame grid."""
    polar = sorted(w for w in lexicon.antonyms if lexicon.valence.get(w, 0) != 0)
    neutral = sorted(w for w, v in lexicon.valence.items() if v == 0 and w not in lexicon.antonyms)
    probs = np.array(TOKEN_FRAME_PROBS)
    tokens = []
    frame = 0
    while frame < n_frames:
        length = min(int(rng.choice(len(probs), p=probs)) + 1, n_frames - frame)
        pool = polar if rng.random() < sentiment_rate else neutral
        word = pool[int(rng.integers(len(pool)))]
        tokens.append(Token(word, frame / fps, (frame + length) / fps))
        frame += length
    return Transcript(tuple(tokens))


def plan_segments(transcript: Transcript, plan: ReplacementPlan) -> list[SegmentAnnotation]:
    """One fake segment per replaced token, at that token's time span."""
    spans = sorted((transcript.tokens[r.index].start, transcript.tokens[r.index].end) for r in plan.replacements)
    return [SegmentAnnotation(s, e) for s, e in spans]


def build_items(config: GeneratorConfig, lexicon: SentimentLexicon | None = None) -> list[GeneratedItem]:
    """Deterministically draw every record (no clip rendering)."""
    config.validate()
    lexicon = lexicon or SentimentLexicon.bundled()
    items = []
    for split, n in config.split_sizes().items():
        if n == 0:
            continue
        rng = np.random.default_rng(stable_seed(config.seed, "split", split))
        categories = np.array([i % 4 for i in range(n)])
        rng.shuffle(categories)
        n_ids = config.identities[split]
        for k in range(n):
            identity = f"{split}-id{int(rng.integers(n_ids)):03d}"
            rid = f"{split}-{k:05d}"
            rec_rng = np.random.default_rng(stable_seed(config.seed, "record", rid))
            n_frames = int(rec_rng.integers(config.min_frames, config.T + 1))
            category = CATEGORIES[categories[k]]
            plan = ReplacementPlan()
            # fakes redraw until the transcript offers a sentiment-changing swap
            for _ in range(_MAX_TRANSCRIPT_DRAWS):
                transcript = random_transcript(rec_rng, n_frames, config.fps, lexicon, config.sentiment_rate)
                if category == "real":
                    break
                plan = select_replacements(transcript, lexicon, replacement_budget(n_frames / config.fps))
                if plan:
                    break
            if not plan:
                category = "real"
            mod_v, mod_a = _CATEGORY_FLAGS[category]
            segments = plan_segments(transcript, plan) if plan else []
            ops = [(r.index, r.original, r.replacement) for r in plan.replacements] if plan else None
            record = VideoRecord(
                id=rid,
                fps=config.fps,
                n_frames=n_frames,
                modify_visual=mod_v,
                modify_audio=mod_a,
                fake_segments=tuple(segments),
                split=split,
                transcript_ops=ops,
            )
            items.append(GeneratedItem(record, identity, transcript, plan))
    return items


def synthesize_clip(record: VideoRecord, plan: ReplacementPlan | None, config: GeneratorConfig,
                    rng: np.random.Generator | None = None, identity: str | None = None) -> FeatureClip:
    if plan is not None and bool(plan) != record.is_fake:
        raise ValueError(f"record {record.id!r} disagrees with its replacement plan")
    return render_clip(
        record,
        identity or record.id,
        seed=config.seed,
        T=config.T,
        visual_channels=config.visual_channels,
        n_mels=config.n_mels,
        audio_steps=config.audio_steps,
        amplitude=config.amplitude,
        rng=rng,
    )


def worker_count() -> int:
    cap = os.environ.get("GLITCHLOC_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def generate_dataset(config: GeneratorConfig, out_dir: str | Path,
                     lexicon: SentimentLexicon | None = None) -> Dataset:
    """Write ``manifest.json`` plus ``clips/<id>.glch`` under ``out_dir``."""
    items = build_items(config, lexicon)
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)

    def emit(item: GeneratedItem):
        clip = synthesize_clip(item.record, item.plan, config, identity=item.identity)
        write_clip(out / "clips" / f"{item.record.id}.glch", clip)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        list(pool.map(emit, items))
    dataset = Dataset([it.record for it in items])
    save_annotations(dataset, out / "manifest.json")
    return dataset


def clip_path(dataset_dir: str | Path, record_id: str) -> Path:
    return Path(dataset_dir) / "clips" / f"{record_id}.glch"


def category_of(record: VideoRecord) -> str:
    for name, flags in _CATEGORY_FLAGS.items():
        if flags == (record.modify_visual, record.modify_audio):
            return name
    raise AssertionError("unreachable")


def dataset_statistics(dataset: Dataset) -> dict:
    cats = Counter(category_of(r) for r in dataset)
    lengths = np.array([s.duration for r in dataset for s in r.fake_segments])
    edges = np.round(np.arange(0.0, 1.8, 0.2), 1)
    hist, _ = np.histogram(lengths, bins=edges) if lengths.size else (np.zeros(len(edges) - 1, int), None)
    n_segs = Counter(len(r.fake_segments) for r in dataset)
    return {
        "n_records": len(dataset),
        "categories": {c: cats.get(c, 0) for c in CATEGORIES},
        "n_segments": int(lengths.size),
        "segment_length_mean": float(lengths.mean()) if lengths.size else 0.0,
        "segment_length_max": float(lengths.max()) if lengths.size else 0.0,
        "fraction_below_1s": float((lengths < 1.0 - 1e-9).mean()) if lengths.size else 0.0,
        "segment_length_histogram": {f"{lo:.1f}-{hi:.1f}": int(h) for lo, hi, h in zip(edges[:-1], edges[1:], hist)},
        "segments_per_video": {str(k): v for k, v in sorted(n_segs.items())},
        "video_length_mean": float(np.mean([r.duration for r in dataset])) if len(dataset) else 0.0,
    }
