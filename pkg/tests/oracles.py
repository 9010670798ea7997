"""Brute-force reference implementations, written independently of the package.

They favour plain loops and exhaustive enumeration over speed.
"""

from __future__ import annotations

import itertools
import math


def interval_iou(a, b) -> float:
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    if hi <= lo:
        return 0.0
    # overlapping intervals: union is the hull
    return (hi - lo) / (max(a[1], b[1]) - min(a[0], b[0]))


def closed_frame_iou(start, duration, gt_first, gt_last) -> float:
    cand = set(range(start, start + duration + 1))
    gt = set(range(gt_first, gt_last + 1))
    return len(cand & gt) / len(cand | gt)


def boundary_map(n_frames, spans, D, T):
    """spans: half-open [first, stop) frame spans; returns nested lists."""
    out = [[0.0] * T for _ in range(D)]
    for i in range(D):
        for j in range(T):
            if j + i > n_frames - 1:
                continue
            for first, stop in spans:
                out[i][j] = max(out[i][j], closed_frame_iou(j, i, first, min(stop, n_frames) - 1))
    return out


def _rank(predictions):
    return sorted((tuple(p)[:4] for p in predictions), key=lambda r: (-r[3], r[0], r[1], r[2]))


def _match_flags(ranked, ground_truth, thr):
    taken = {vid: set() for vid in ground_truth}
    flags = []
    for vid, s, e, _ in ranked:
        choice, choice_iou = None, -1.0
        for k, gt in enumerate(ground_truth.get(vid, [])):
            if k in taken.get(vid, set()):
                continue
            iou = interval_iou((s, e), gt)
            if iou >= thr and iou > choice_iou:
                choice, choice_iou = k, iou
        if choice is not None:
            taken[vid].add(choice)
        flags.append(choice is not None)
    return flags


def average_precision(predictions, ground_truth, thr) -> float:
    n_gt = sum(len(v) for v in ground_truth.values())
    if n_gt == 0:
        return 0.0
    flags = _match_flags(_rank(predictions), ground_truth, thr)
    precisions = []
    hits = 0
    for k, f in enumerate(flags):
        hits += f
        precisions.append(hits / (k + 1))
    # each true positive contributes the best precision at or beyond its rank
    total = 0.0
    for k, f in enumerate(flags):
        if f:
            total += max(precisions[k:])
    return total / n_gt


def average_recall(proposals, ground_truth, n, thresholds) -> float:
    ranked = _rank(proposals)
    per_video = []
    for vid, gts in ground_truth.items():
        if not gts:
            continue
        mine = [r for r in ranked if r[0] == vid][:n]
        recalls = []
        for thr in thresholds:
            flags = _match_flags(mine, {vid: gts}, thr)
            recalls.append(sum(flags) / len(gts))
        per_video.append(sum(recalls) / len(recalls))
    return sum(per_video) / len(per_video) if per_video else 0.0


def auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def soft_nms(proposals, sigma, floor, max_output):
    """proposals: (vid, start, end, score); ranking ties by start then duration."""
    pool = [list(p) for p in proposals]
    kept = []
    while pool and len(kept) < max_output:
        pool.sort(key=lambda p: (-p[3], p[1], p[2] - p[1]))
        top = pool.pop(0)
        if top[3] < floor:
            break
        kept.append(tuple(top))
        for p in pool:
            iou = interval_iou((top[1], top[2]), (p[1], p[2]))
            p[3] = p[3] * math.exp(-iou * iou / sigma)
    return kept


def best_substitution(words, valence, antonyms, max_swaps):
    """Exhaustive search over per-token choices (keep or any antonym).

    Returns (abs_delta, swaps) with swaps a tuple of (index, antonym), or
    (0.0, ()) when no swap changes the score. Ties: fewer swaps, lower
    indices, then alphabetical antonyms.
    """
    score = lambda ws: sum(valence.get(w, 0.0) for w in ws)
    base = score(words)
    options = [[None] + sorted(antonyms.get(w, [])) for w in words]
    best_key, best = None, ()
    for choice in itertools.product(*options):
        swaps = tuple((i, a) for i, a in enumerate(choice) if a is not None)
        if not swaps or len(swaps) > max_swaps:
            continue
        if any(valence.get(a, 0.0) == valence.get(words[i], 0.0) for i, a in swaps):
            continue
        new = list(words)
        for i, a in swaps:
            new[i] = a
        delta = score(new) - base
        key = (-abs(delta), len(swaps), tuple(i for i, _ in swaps), tuple(a for _, a in swaps))
        if best_key is None or key < best_key:
            best_key, best = key, swaps
    if not best or best_key[0] == 0:
        return 0.0, ()
    return -best_key[0], best
