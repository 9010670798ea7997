"""End-to-end acceptance criteria, each reported as one pass/fail line.

The desk run (criteria 5, 6, 8) trains the default configuration twice and
takes several minutes on one core.
"""

import hashlib
import json
import string
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES, param_grad_check
from glitchloc.annotations import (
    SegmentAnnotation,
    VideoRecord,
    gt_boundary_map,
    load_annotations,
    stack_labels,
)
from glitchloc.autodiff import grad_check
from glitchloc.cli import main
from glitchloc.losses import (
    LossWeights,
    boundary_loss,
    compute_losses,
    contrastive_loss,
    frame_loss,
    multimodal_boundary_loss,
)
from glitchloc.metrics import (
    AR_THRESHOLDS,
    auc,
    average_precision,
    average_recall_at_n,
    evaluate_detections,
    temporal_iou,
)
from glitchloc.model import BoundaryAwareDetector, ModelConfig, weighted_fuse
from glitchloc.postproc import NmsConfig, Proposal, extract_proposals, soft_nms
from glitchloc.synthgen import (
    CATEGORIES,
    GeneratorConfig,
    SentimentLexicon,
    Transcript,
    build_items,
    dataset_statistics,
    select_replacements,
)

pytestmark = pytest.mark.slow

KINDS = ("p", "c", "pc")


def report(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


# ---------------------------------------------------------------------------
# 1. gradient suite


def _loss_instances(rng):
    lengths = [8, int(rng.integers(3, 9))]
    label = rng.uniform(size=(2, 3, 8))
    lv, la = rng.uniform(size=(2, 3, 8)), rng.uniform(size=(2, 3, 8))
    y = rng.integers(0, 2, 2)
    yv, ya = rng.integers(0, 2, (2, 8)), rng.integers(0, 2, (2, 8))
    return {
        "contrastive": (lambda a, b: contrastive_loss(a, b, y, 0.99, lengths),
                        [rng.normal(size=(2, 4, 8)) * 0.3, rng.normal(size=(2, 4, 8)) * 0.3]),
        "frame": (lambda a, b: frame_loss(a, b, yv, ya, lengths),
                  [rng.uniform(0.05, 0.95, (2, 8)), rng.uniform(0.05, 0.95, (2, 8))]),
        "boundary": (lambda *m: boundary_loss(dict(zip(KINDS, m)), label, lengths),
                     [rng.uniform(size=(2, 3, 8)) for _ in KINDS]),
        "multimodal_boundary": (
            lambda *m: multimodal_boundary_loss(dict(zip(KINDS, m[:3])), dict(zip(KINDS, m[3:])), lv, la, lengths),
            [rng.uniform(size=(2, 3, 8)) for _ in range(6)]),
    }


GRAD_CFG = ModelConfig(latent_channels=4, T=8, D=3, visual_channels=3, n_mels=2, audio_steps=2, depth=1, heads=2,
                       fusion_hidden=4)


def _end_to_end_error(k):
    rng = np.random.default_rng(1000 + k)
    model = BoundaryAwareDetector(ModelConfig(**{**GRAD_CFG.to_json(), "seed": k}))
    first = int(rng.integers(0, 4))
    recs = [VideoRecord("a", 5.0, 8, True, bool(k % 2), (SegmentAnnotation(first / 5, (first + 3) / 5),), "train"),
            VideoRecord("b", 5.0, int(rng.integers(4, 9)), False, False, (), "train")]
    targets = stack_labels(recs, GRAD_CFG.D, GRAD_CFG.T)
    v, a = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 4, 8))
    loss = lambda: compute_losses(model(v, a, targets["lengths"]), targets, LossWeights()).total
    return param_grad_check(loss, model.named_parameters(), rng, per_tensor=2)


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for k in range(20):
        for name, (fn, point) in _loss_instances(np.random.default_rng(k)).items():
            worst[name] = max(worst.get(name, 0.0), grad_check(fn, point).max_relative_error)
    worst_e2e = max(_end_to_end_error(k) for k in range(20))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and worst_e2e <= 1e-3 and elapsed <= 120
    detail = ", ".join(f"{n} {v:.1e}" for n, v in worst.items())
    assert report(1, "gradient suite", ok, f"{detail}, end-to-end {worst_e2e:.1e}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. oracle equivalence


def _detection_instance(rng):
    gt = {}
    for v in range(int(rng.integers(1, 21))):
        segs, t = [], 0
        for _ in range(int(rng.integers(0, 3))):
            t += int(rng.integers(0, 6))
            d = int(rng.integers(1, 8))
            segs.append((t, t + d))
            t += d
        gt[f"v{v:02d}"] = segs
    vids = sorted(gt)
    preds = []
    for _ in range(int(rng.integers(0, 30))):
        s = int(rng.integers(0, 20))
        preds.append((vids[int(rng.integers(len(vids)))], s, s + int(rng.integers(1, 8)),
                      float(np.round(rng.uniform(), 2))))
    return preds, gt


def _lexicon(rng):
    vocab = list(string.ascii_lowercase[:10])
    valence = {w: float(rng.choice([-3, -2, -1, 0, 0.5, 1, 2, 3])) for w in vocab}
    antonyms = {}
    for w in vocab[:6]:
        antonyms[w] = sorted(set(rng.choice(vocab, size=int(rng.integers(1, 3))).tolist()) - {w}) or [vocab[-1]]
    return vocab, SentimentLexicon(valence, antonyms)


def test_criterion_2_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    err = dict.fromkeys(("AP", "AR@N", "AUC", "IoU", "Soft-NMS", "theta"), 0.0)
    for _ in range(120):
        preds, gt = _detection_instance(rng)
        for thr in (0.5, 0.75, 0.95):
            err["AP"] = max(err["AP"], abs(average_precision(preds, gt, thr) - oracles.average_precision(preds, gt, thr)))
        n = int(rng.choice([1, 2, 5, 10, 100]))
        ar = average_recall_at_n(preds, gt, n)
        err["AR@N"] = max(err["AR@N"], abs(ar - oracles.average_recall(preds, gt, n, AR_THRESHOLDS)))

        m = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, m)
        labels[:2] = (0, 1)
        scores = np.round(rng.uniform(size=m), 1)
        err["AUC"] = max(err["AUC"], abs(auc(scores, labels) - oracles.auc(scores, labels)))

        a = tuple(sorted(rng.uniform(0, 20, 2)))
        b = tuple(sorted(rng.uniform(0, 20, 2)))
        if a[1] > a[0] and b[1] > b[0]:
            err["IoU"] = max(err["IoU"], abs(temporal_iou(a, b) - oracles.interval_iou(a, b)))

        props = []
        for _ in range(int(rng.integers(1, 20))):
            s = int(rng.integers(0, 15))
            props.append(Proposal("v", s, s + int(rng.integers(1, 7)), float(rng.uniform())))
        sigma, cap = float(rng.choice([0.05, 0.25, 1.0])), int(rng.integers(1, 12))
        got = soft_nms(props, NmsConfig(sigma, 1e-3, cap))
        ref = oracles.soft_nms(props, sigma, 1e-3, cap)
        if [(p.start, p.end) for p in got] != [(r[1], r[2]) for r in ref]:
            err["Soft-NMS"] = float("inf")
        else:
            err["Soft-NMS"] = max([err["Soft-NMS"]] + [abs(p.score - r[3]) for p, r in zip(got, ref)])

        vocab, lex = _lexicon(rng)
        toks = rng.choice(vocab, size=int(rng.integers(1, 13))).tolist()
        budget = int(rng.integers(1, 3))
        plan = select_replacements(Transcript.from_words(toks), lex, budget)
        ref_delta, ref_swaps = oracles.best_substitution(toks, lex.valence, lex.antonyms, budget)
        if tuple((r.index, r.replacement) for r in plan.replacements) != ref_swaps:
            err["theta"] = float("inf")
        else:
            err["theta"] = max(err["theta"], abs(abs(plan.total_delta) - ref_delta))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-9 for v in err.values()) and elapsed <= 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in err.items())
    assert report(2, "oracle equivalence, 120 instances", ok, f"{detail}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 3. round-trip localization


def test_criterion_3_round_trip_localization():
    items = build_items(GeneratorConfig(n_train=140, n_validation=30, n_test=30, seed=11))
    records = [it.record for it in items]
    preds, gt = [], {}
    for rec in records:
        bm = gt_boundary_map(rec, None, 8, 64)
        preds += [tuple(p) for p in extract_proposals(bm, rec.n_frames, video_id=rec.id)]
        gt[rec.id] = rec.segment_frames()
    rep = evaluate_detections(preds, gt)
    ok = len(records) == 200 and rep.ap[0.5] == 1.0 and rep.ap[0.75] == 1.0
    assert report(3, "round-trip localization, 200 records", ok,
                  f"AP@0.5 {rep.ap[0.5]!r}, AP@0.75 {rep.ap[0.75]!r}")


# ---------------------------------------------------------------------------
# 4. fusion identities


def test_criterion_4_fusion_identities():
    rng = np.random.default_rng(4)
    mean_err, limit_err, cells = 0.0, 0.0, 0
    while cells < 1000:
        a, b = rng.uniform(size=(8, 16)), rng.uniform(size=(8, 16))
        w = rng.uniform(0.5, 3.0, size=(8, 16))
        mean_err = max(mean_err, float(np.abs(weighted_fuse(a, b, w, w).value - (a + b) / 2).max()))
        eps = np.full((8, 16), 1e-6)
        limit_err = max(limit_err, float(np.abs(weighted_fuse(a, b, w, eps).value - a).max()))
        cells += a.size
    ok = mean_err <= 1e-12 and limit_err <= 1e-5
    assert report(4, f"fusion identities, {cells} cells", ok, f"mean {mean_err:.1e}, audio->eps {limit_err:.1e}")


# ---------------------------------------------------------------------------
# 5, 6, 8. desk run


def desk_run(root):
    times = {}
    t0 = time.perf_counter()
    assert main(["generate", "--seed", "0", "--out", str(root / "data")]) == 0
    times["generate"] = time.perf_counter() - t0
    assert main(["train", "--seed", "0", "--dataset", str(root / "data"), "--out", str(root / "run")]) == 0
    times["train"] = time.perf_counter() - times["generate"] - t0
    common = ["--seed", "0", "--dataset", str(root / "data"), "--checkpoint", str(root / "run" / "final.ckpt")]
    assert main(["eval", *common, "--out", str(root / "report.json")]) == 0
    assert main(["eval", *common, "--baseline", "--out", str(root / "baseline.json")]) == 0
    times["total"] = time.perf_counter() - t0
    return {
        "times": times,
        "report": json.loads((root / "report.json").read_text()),
        "baseline": json.loads((root / "baseline.json").read_text()),
    }


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_a")
    return root, desk_run(root)


def test_criterion_5_end_to_end_desk_run(desk):
    _, run = desk
    ap50, ar10 = run["report"]["ap"]["0.5"], run["report"]["ar"]["10"]
    base = run["baseline"]["ap"]["0.5"]
    total = run["times"]["total"]
    ok = ap50 >= 0.70 and ar10 >= 0.60 and base <= 0.10 and total <= 1800
    assert report(5, "desk run 500/100/100, 30 epochs", ok,
                  f"AP@0.5 {ap50:.4f}, AR@10 {ar10:.4f}, baseline AP@0.5 {base:.4f}, "
                  f"{total:.0f}s on 1 core")


def test_criterion_6_classification_auc(desk):
    _, run = desk
    value = run["report"]["auc"]
    assert report(6, "video-score AUC", value is not None and value >= 0.90, f"AUC {value}")


def test_training_loss_decreases_over_epochs(desk):
    """Trainer example: epoch-average loss decreases in >= 90% of consecutive pairs."""
    root, _ = desk
    rows = [json.loads(line) for line in (root / "run" / "train_log.jsonl").read_text().splitlines()]
    losses = [r["train_loss"] for r in rows if r["type"] == "epoch"]
    pairs = len(losses) - 1
    down = sum(b < a for a, b in zip(losses, losses[1:]))
    ok = down >= 0.9 * pairs
    line = f"[{'PASS' if ok else 'FAIL'}] trainer example: epoch loss decreases in {down}/{pairs} pairs (need 90%)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 7. generator statistics


def generate_400(root):
    args = ["generate", "--seed", "0", "--out", str(root), "--set", "generator.n_train=300",
            "--set", "generator.n_validation=50", "--set", "generator.n_test=50"]
    assert main(args) == 0
    return dataset_statistics(load_annotations(root / "manifest.json"))


def test_criterion_7_generator_statistics(tmp_path):
    stats = generate_400(tmp_path)
    counts = [stats["categories"][c] for c in CATEGORIES]
    uniform = stats["n_records"] / len(CATEGORIES)
    ok = (stats["n_records"] == 400
          and all(abs(c - uniform) <= 0.1 * uniform for c in counts)
          and stats["segment_length_max"] <= 1.6 + 1e-9
          and stats["fraction_below_1s"] >= 0.85)
    assert report(7, "generator statistics, 400 clips", ok,
                  f"categories {counts}, max segment {stats['segment_length_max']:.2f}s, "
                  f"below 1s {100 * stats['fraction_below_1s']:.1f}%")


# ---------------------------------------------------------------------------
# 8. determinism


def tree_digest(directory):
    h = hashlib.sha256()
    for f in sorted(p for p in directory.rglob("*") if p.is_file()):
        h.update(f.relative_to(directory).as_posix().encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_criterion_8_determinism(desk, tmp_path):
    root_a, _ = desk
    root_b = tmp_path / "desk_b"
    root_b.mkdir()
    desk_run(root_b)
    artifacts = ["run/last.ckpt", "run/final.ckpt", "run/train_log.jsonl", "report.json", "baseline.json"]
    mismatched = [f for f in artifacts if (root_a / f).read_bytes() != (root_b / f).read_bytes()]
    if tree_digest(root_a / "data") != tree_digest(root_b / "data"):
        mismatched.append("data/")
    stats = [generate_400(tmp_path / f"gen{k}") for k in range(2)]
    if stats[0] != stats[1] or tree_digest(tmp_path / "gen0") != tree_digest(tmp_path / "gen1"):
        mismatched.append("generator statistics run")
    ok = not mismatched
    assert report(8, "byte-identical repeat of criteria 5-7", ok,
                  "all artifacts identical" if ok else f"differs: {mismatched}")
