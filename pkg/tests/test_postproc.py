import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from glitchloc.annotations import SegmentAnnotation, VideoRecord, gt_boundary_map
from glitchloc.metrics import auc
from glitchloc.postproc import (
    NmsConfig,
    Proposal,
    UntrainedHeadError,
    VideoScoreHead,
    average_maps,
    default_nms_grid,
    detect,
    extract_proposals,
    frame_run_proposals,
    merge_duplicates,
    pool_map,
    proposals_to_jsonl,
    soft_nms,
    tune_nms,
    video_score,
)


class TestAverage:
    def test_identical_maps(self):
        m = np.random.default_rng(0).uniform(size=(3, 8))
        np.testing.assert_array_equal(average_maps(m, m, m), m)

    def test_constants(self):
        out = average_maps(np.zeros((2, 4)), np.full((2, 4), 0.3), np.full((2, 4), 0.6))
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    def test_within_bounds(self, seed):
        maps = np.random.default_rng(seed).uniform(size=(3, 4, 6))
        out = average_maps(*maps)
        assert np.all(out >= maps.min(axis=0) - 1e-15) and np.all(out <= maps.max(axis=0) + 1e-15)


class TestExtract:
    def test_zero_map(self):
        assert extract_proposals(np.zeros((4, 8)), 8) == []

    def test_gt_map_peak(self):
        rec = VideoRecord("v", 5.0, 30, True, False, (SegmentAnnotation(1.0, 1.8),), "test")
        props = extract_proposals(gt_boundary_map(rec, None, 8, 32), 30)
        assert (props[0].start, props[0].end, props[0].score) == (5, 9, 1.0)

    @given(st.integers(0, 2**32 - 1))
    def test_top_k_matches_full_sort(self, seed):
        rng = np.random.default_rng(seed)
        bm = rng.uniform(size=(4, 10))
        n = int(rng.integers(4, 11))
        cells = [(-bm[i, j], j, i, j, j + i + 1) for i in range(4) for j in range(10) if j + i <= n - 1]
        cells = [c for c in cells if -c[0] >= 1e-3]
        ref = [(s, e, -neg) for neg, _, _, s, e in sorted(cells)][:5]
        got = [(p.start, p.end, p.score) for p in extract_proposals(bm, n, top_k=5)]
        assert got == ref

    def test_merge_keeps_best_per_extent(self):
        props = [Proposal("a", 1, 3, 0.4), Proposal("a", 1, 3, 0.7), Proposal("b", 1, 3, 0.1)]
        assert merge_duplicates(props) == [Proposal("a", 1, 3, 0.7), Proposal("b", 1, 3, 0.1)]


class TestSoftNms:
    CFG = NmsConfig(sigma=0.5, score_floor=1e-3, max_output=100)

    def test_single(self):
        p = [Proposal("v", 2, 5, 0.7)]
        assert soft_nms(p, self.CFG) == p

    def test_disjoint_unchanged(self):
        p = [Proposal("v", 0, 3, 0.9), Proposal("v", 5, 9, 0.6)]
        assert soft_nms(p, self.CFG) == p

    def test_identical_extent_decay(self):
        out = soft_nms([Proposal("v", 2, 6, 0.9), Proposal("v", 2, 6, 0.8)], self.CFG)
        assert out[0].score == 0.9
        assert out[1].score == pytest.approx(0.8 * math.exp(-1 / 0.5), abs=1e-15)
        assert out[1].score == pytest.approx(0.10827, abs=1e-5)

    def test_floor_and_cap(self):
        props = [Proposal("v", i, i + 1, 0.5 - 0.01 * i) for i in range(10)]
        assert len(soft_nms(props, NmsConfig(0.5, 0.46, 100))) == 5
        assert len(soft_nms(props, NmsConfig(0.5, 0.0, 3))) == 3

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.25, 1.0]))
    def test_matches_scalar_oracle(self, seed, sigma):
        rng = np.random.default_rng(seed)
        props = []
        for _ in range(int(rng.integers(1, 15))):
            s = int(rng.integers(0, 12))
            props.append(Proposal("v", s, s + int(rng.integers(1, 6)), float(rng.uniform())))
        got = soft_nms(props, NmsConfig(sigma, 1e-3, 8))
        ref = oracles.soft_nms(props, sigma, 1e-3, 8)
        assert [(p.start, p.end) for p in got] == [(r[1], r[2]) for r in ref]
        np.testing.assert_allclose([p.score for p in got], [r[3] for r in ref], atol=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            NmsConfig(sigma=0)
        with pytest.raises(ValueError):
            NmsConfig(score_floor=1.0)


def _gt_maps(n_videos=6, seed=0):
    rng = np.random.default_rng(seed)
    maps, gt = [], {}
    for k in range(n_videos):
        first = int(rng.integers(0, 20))
        stop = first + int(rng.integers(2, 8))
        rec = VideoRecord(f"v{k}", 5.0, 30, True, False, (SegmentAnnotation(first / 5, stop / 5),), "validation")
        bm = gt_boundary_map(rec, None, 8, 32)
        maps.append((rec.id, np.clip(bm * 0.9 + rng.uniform(0, 0.3, bm.shape), 0, 0.99), 30))
        gt[rec.id] = rec.segment_frames()
    return maps, gt


class TestTune:
    def test_single_element_grid(self):
        maps, gt = _gt_maps()
        best, scores = tune_nms(maps, gt, [NmsConfig(0.3, 1e-3, 10)])
        assert best == NmsConfig(0.3, 1e-3, 10) and len(scores) == 1

    def test_dominant_config_selected(self):
        maps, gt = _gt_maps()
        grid = [NmsConfig(0.5, 0.995, 1), NmsConfig(0.5, 1e-3, 100)]
        best, scores = tune_nms(maps, gt, grid)
        assert best == grid[1]
        assert scores[0] == 0.0

    def test_three_by_three_grid_matches_exhaustive_evaluation(self):
        maps, gt = _gt_maps(seed=4)
        grid = [NmsConfig(s, f, 20) for s in (0.05, 0.3, 1.0) for f in (1e-3, 0.05, 0.3)]
        best, scores = tune_nms(maps, gt, grid)
        ref = []
        for cfg in grid:
            props = [p for vid, bm, n in maps for p in detect(bm, n, cfg, vid)]
            ref.append(oracles.average_precision(props, gt, 0.5))
        np.testing.assert_allclose(scores, ref, atol=1e-12)
        assert best == grid[int(np.argmax(ref))]

    def test_default_grid_size(self):
        assert len(default_nms_grid()) == 15


class TestFrameRuns:
    def test_runs(self):
        s = np.array([0.1, 0.9, 0.8, 0.2, 0.7, 0.95, 0.6, 0.1, 0.9])
        props = frame_run_proposals(s, 9, 0.5, 2, "v")
        assert [(p.start, p.end) for p in props] == [(1, 3), (4, 7)]

    def test_padding_ignored(self):
        assert frame_run_proposals(np.array([0.0, 0.0, 1.0, 1.0]), 2) == []


class TestJsonl:
    def test_seconds_conversion(self):
        text = proposals_to_jsonl([Proposal("v", 5, 9, 0.8)], fps=5.0)
        row = json.loads(text)
        assert (row["start_s"], row["end_s"]) == (1.0, 1.8)


class TestVideoHead:
    def test_zero_head_gives_half(self):
        head = VideoScoreHead(24)
        state = {k: np.zeros_like(v) for k, v in head.state().items()}
        state["scale"] = np.ones(24)
        assert video_score(np.zeros((8, 32)), 30, VideoScoreHead.from_state(state)) == 0.5

    def test_untrained_head_refuses(self):
        with pytest.raises(UntrainedHeadError):
            VideoScoreHead(24).predict(np.zeros(24))

    def test_separable_pools(self):
        rng = np.random.default_rng(0)

        def pools(n, fake):
            out = []
            for _ in range(n):
                bm = rng.uniform(0, 0.3, (8, 32))
                if fake:
                    i, j = rng.integers(0, 8), rng.integers(0, 20)
                    bm[i, j] = rng.uniform(0.7, 1.0)
                out.append(pool_map(bm, 30))
            return np.array(out)

        x = np.concatenate([pools(60, False), pools(60, True)])
        y = np.array([0] * 60 + [1] * 60)
        head = VideoScoreHead(x.shape[1], seed=1).fit(x, y, epochs=200)
        xt = np.concatenate([pools(40, False), pools(40, True)])
        scores = head.predict(xt)
        assert np.all((scores > 0) & (scores < 1))
        assert auc(scores, [0] * 40 + [1] * 40) >= 0.95

    def test_state_round_trip(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(20, 24)), np.arange(20) % 2
        head = VideoScoreHead(24).fit(x, y, epochs=5)
        np.testing.assert_array_equal(VideoScoreHead.from_state(head.state()).predict(x), head.predict(x))
