from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindspot.data.clips import VideoSource
from blindspot.data.curation import (
    CurationConfig,
    LabeledImage,
    PixelEmbedder,
    clip_around,
    curate,
    curation_report,
    filter_entries,
    match_frames,
)
from blindspot.data.manifest import ClipManifestEntry
from blindspot.data.synthetic import make_planted_corpus


@pytest.fixture(scope="module")
def planted():
    return make_planted_corpus(n_sources=4, n_planted=15, n_decoys=15, seed=3)


def _brute_force_keep(entries, min_sim, stride_s, order):
    """Largest feasible subset, compared lexicographically in priority order."""
    rank = {p: i for i, p in enumerate(order)}
    cand = sorted(
        (i for i, e in enumerate(entries) if e.similarity >= min_sim),
        key=lambda i: (-entries[i].similarity, rank[entries[i].source_path], entries[i].start_frame, i),
    )

    def feasible(subset):
        for a, b in itertools.combinations(subset, 2):
            ea, eb = entries[a], entries[b]
            if ea.source_path == eb.source_path and abs(ea.center_frame - eb.center_frame) < stride_s * ea.fps:
                return False
        return True

    # product() yields bit vectors in descending lexicographic order
    for bits in itertools.product([1, 0], repeat=len(cand)):
        subset = [c for c, keep in zip(cand, bits) if keep]
        if feasible(subset):
            return subset
    return []


class TestMatching:
    def test_planted_frames_are_recovered(self, planted):
        matches = match_frames(planted.images, planted.sources, PixelEmbedder(), period=30)
        for m, truth in zip(matches, planted.truth):
            if truth is not None:
                assert (m.source_index, m.frame) == truth
                assert m.similarity == pytest.approx(1.0)

    def test_decoys_match_below_one(self, planted):
        matches = match_frames(planted.images, planted.sources, PixelEmbedder(), period=30)
        for m, truth in zip(matches, planted.truth):
            if truth is None:
                assert m.similarity < 1.0 - 1e-9

    def test_only_lattice_frames_are_candidates(self, planted):
        for m in match_frames(planted.images, planted.sources, PixelEmbedder(), period=30):
            assert m.frame % 30 == 0

    def test_ties_go_to_earliest(self):
        frames = np.zeros((90, 4, 4, 3), dtype=np.uint8) + 100
        sources = [VideoSource("a", frames.copy()), VideoSource("b", frames.copy())]
        m = match_frames([LabeledImage(frames[0], "x")], sources, PixelEmbedder(grid=2), period=30)[0]
        assert (m.source_index, m.frame) == (0, 0)

    def test_parallel_embedding_agrees(self, planted):
        a = match_frames(planted.images, planted.sources, PixelEmbedder(), workers=1)
        b = match_frames(planted.images, planted.sources, PixelEmbedder(), workers=4)
        assert a == b


class TestClipAround:
    @pytest.mark.parametrize(
        "frame,n,length,expected",
        [(150, 120, 300, (91, 120)), (0, 120, 300, (0, 120)), (299, 68, 300, (232, 68)), (5, 500, 300, (0, 300))],
    )
    def test_centered_and_clamped(self, frame, n, length, expected):
        assert clip_around(frame, n, length) == expected

    def test_lengths(self):
        assert CurationConfig(length="4s").clip_frames(30) == 120
        assert CurationConfig(length="68f").clip_frames(24) == 68

    @pytest.mark.parametrize("kwargs", [{"length": "4 min"}, {"min_similarity": 1.5}, {"min_stride_s": -1}, {"period": 0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            CurationConfig(**kwargs)


class TestCurate:
    def test_every_planted_match_is_kept_without_filters(self, planted):
        res = curate(planted.images, planted.sources, PixelEmbedder(), CurationConfig(min_similarity=0.0))
        assert len(res.entries) == len(planted.images)

    def test_threshold_above_one_keeps_nothing(self, planted):
        res = curate(planted.images, planted.sources, PixelEmbedder(), CurationConfig(min_similarity=1.01))
        assert res.entries == []

    def test_stride_guarantee(self, planted):
        res = curate(planted.images, planted.sources, PixelEmbedder(), CurationConfig(min_similarity=0.0, min_stride_s=4))
        by_source = {}
        for e in res.entries:
            by_source.setdefault(e.source_path, []).append(e.center_frame)
        for centers in by_source.values():
            for a, b in itertools.combinations(centers, 2):
                assert abs(a - b) >= 4 * 30

    def test_clips_stay_inside_sources(self, planted):
        lengths = {s.path: len(s) for s in planted.sources}
        for length in ("4s", "68f", "30s"):
            res = curate(planted.images, planted.sources, PixelEmbedder(), CurationConfig(length=length, min_similarity=0))
            assert all(0 <= e.start_frame and e.end_frame <= lengths[e.source_path] for e in res.entries)

    def test_report_rows(self, planted):
        matches = match_frames(planted.images, planted.sources, PixelEmbedder())
        rows = curation_report(matches, planted.images, planted.sources, [("4s", 0.0, 0.0), ("4s", 0.99, 4.0)])
        assert rows[0] == ("4s", 0.0, 0.0, len(planted.images))
        assert rows[1][3] <= rows[0][3]


def _entries_strategy():
    entry = st.builds(
        lambda src, start, sim: ClipManifestEntry(f"s{src}", start, 31, 30.0, "x", (), round(sim, 3)),
        st.integers(0, 2),
        st.integers(0, 240),
        st.floats(0.9, 1.0),
    )
    return st.lists(entry, min_size=0, max_size=9)


@settings(max_examples=200, deadline=None)
@given(entries=_entries_strategy(), min_sim=st.floats(0.9, 1.0), stride=st.sampled_from([0.0, 1.0, 2.5, 4.0, 10.0]))
def test_filter_matches_brute_force(entries, min_sim, stride):
    order = ["s0", "s1", "s2"]
    assert sorted(filter_entries(entries, min_sim, stride, order)) == sorted(_brute_force_keep(entries, min_sim, stride, order))


@settings(max_examples=100, deadline=None)
@given(entries=_entries_strategy(), sims=st.lists(st.floats(0.9, 1.0), min_size=2, max_size=2), stride=st.floats(0, 10))
def test_count_monotone_in_threshold(entries, sims, stride):
    lo, hi = sorted(sims)
    assert len(filter_entries(entries, hi, stride)) <= len(filter_entries(entries, lo, stride))


def _packed_entries():
    # starts squeezed into a few seconds so stride conflicts are common
    entry = st.builds(
        lambda src, start, sim: ClipManifestEntry(f"s{src}", start, 31, 30.0, "x", (), sim),
        st.integers(0, 1),
        st.integers(0, 120),
        st.floats(0.9, 1.0),
    )
    return st.lists(entry, max_size=12)


@settings(max_examples=300, deadline=None)
@given(entries=_packed_entries(), strides=st.lists(st.floats(0, 4), min_size=2, max_size=2), sim=st.floats(0.9, 1.0))
def test_count_monotone_in_stride(entries, strides, sim):
    lo, hi = sorted(strides)
    kept_hi = filter_entries(entries, sim, hi)
    assert len(kept_hi) <= len(filter_entries(entries, sim, lo))
    # the top-ranked passing entry of each source always survives
    passing = [e for e in entries if e.similarity >= sim]
    assert len({entries[i].source_path for i in kept_hi}) == len({e.source_path for e in passing})


def test_planted_report_is_monotone(planted):
    matches = match_frames(planted.images, planted.sources, PixelEmbedder())
    sims = [0.0, 0.9, 0.99, 0.999, 1.0, 1.01]
    strides = [0.0, 1.0, 2.0, 4.0, 8.0]
    grid = {
        (s, t): n
        for _, s, t, n in curation_report(
            matches, planted.images, planted.sources, [("4s", s, t) for s in sims for t in strides]
        )
    }
    for t in strides:
        counts = [grid[(s, t)] for s in sims]
        assert counts == sorted(counts, reverse=True)
    for s in sims:
        counts = [grid[(s, t)] for t in strides]
        assert counts == sorted(counts, reverse=True)
