from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from blindspot.contrastive import MultimodalModel, Vocabulary
from blindspot.data.clips import stack_image
from blindspot.evaluation.probe import (
    IMAGE_SPLIT,
    VIDEO_SPLIT,
    ProbeSplit,
    extract_features,
    linear_probe,
    make_split,
    topk_correct,
)
from blindspot.evaluation.report import config_hash, emit_report, per_class_table, read_per_class, run_dir
from blindspot.evaluation.trials import (
    TrialError,
    TrialRecord,
    format_trials,
    image_model_adapter,
    make_trials,
    multimodal_scorer,
    nway_trial_eval,
    parse_trials,
    trial_outcomes,
)
from blindspot.mae import VideoMAE

from conftest import TINY


def _label_map(n_classes=6, per_class=5):
    return {f"c{c}_{i}": f"c{c}" for c in range(n_classes) for i in range(per_class)}


def _binomial_band(p: float, n: int) -> float:
    return 3 * math.sqrt(p * (1 - p) / n)


class TestSplits:
    def test_ratios_and_disjointness(self):
        s = make_split(1000, VIDEO_SPLIT, seed=0)
        assert (len(s.train), len(s.val), len(s.test)) == (800, 100, 100)
        assert sorted(np.concatenate([s.train, s.val, s.test]).tolist()) == list(range(1000))
        s = make_split(200, IMAGE_SPLIT)
        assert (len(s.train), len(s.val), len(s.test)) == (90, 10, 100)

    def test_reproducible(self):
        a, b = make_split(50, seed=3), make_split(50, seed=3)
        assert np.array_equal(a.test, b.test)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            ProbeSplit(np.array([0, 1]), np.array([1]), np.array([2]))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            make_split(10, (0.5, 0.5, 0.5))


class TestProbe:
    def test_separable_clusters(self):
        rng = np.random.default_rng(0)
        k, n = 6, 300
        labels = rng.integers(0, k, n)
        feats = np.eye(k)[labels] * 3 + rng.normal(0, 0.1, (n, k))
        res = linear_probe(feats, labels.tolist(), make_split(n, seed=0), epochs=100)
        assert res.acc1 == 1.0
        assert res.acc5 == 1.0

    def test_top5_covers_small_label_sets(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 5, 200).tolist()
        res = linear_probe(rng.normal(size=(200, 8)), labels, make_split(200, seed=1), epochs=20)
        assert res.acc5 == 1.0
        assert res.acc5 >= res.acc1

    def test_missing_class_warns(self):
        feats = np.arange(20, dtype=float)[:, None]
        labels = ["a"] * 10 + ["b"] * 9 + ["z"]
        split = ProbeSplit(np.arange(0, 19, 2), np.array([1, 3]), np.array([5, 19]))
        with pytest.warns(UserWarning, match="z"):
            linear_probe(feats, labels, split, epochs=5)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            linear_probe(np.zeros((4, 2)), ["a"] * 4, make_split(4))

    def test_per_class_counts_add_up(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, 100).tolist()
        res = linear_probe(rng.normal(size=(100, 4)), labels, make_split(100, seed=2), epochs=10)
        correct = sum(c for c, _ in res.per_class.values())
        total = sum(n for _, n in res.per_class.values())
        assert total == 10 and correct / total == pytest.approx(res.acc1)

    def test_topk(self):
        logits = np.array([[0.1, 0.9, 0.0], [0.5, 0.2, 0.3]])
        assert topk_correct(logits, np.array([1, 2]), 1).tolist() == [True, False]
        assert topk_correct(logits, np.array([1, 2]), 2).tolist() == [True, True]


class TestTrials:
    def test_construction(self):
        labels = _label_map()
        trials = make_trials(labels, 200, seed=0)
        for t in trials:
            t.validate(labels)
            assert len(t.candidates) == 4

    def test_needs_four_classes(self):
        with pytest.raises(TrialError):
            make_trials(_label_map(3), 1)

    def test_oracle_and_constant_scorers(self):
        labels = _label_map()
        trials = make_trials(labels, 100, seed=1)
        assert nway_trial_eval(lambda lab, ref: float(labels[ref] == lab), trials) == 1.0
        # every candidate ties, and ties count as wrong
        assert nway_trial_eval(lambda lab, ref: 0.5, trials) == 0.0

    def test_file_round_trip(self):
        labels = _label_map()
        trials = make_trials(labels, 10, seed=2)
        assert parse_trials(format_trials(trials), labels) == trials

    @pytest.mark.parametrize(
        "text,match",
        [
            ("c0,c0_0,c1_0,c2_0\n", "line 1"),
            ("c0,c0_0,c1_0,c2_0,c0_1\n", "line 1"),  # foil shares target label
            ("c0,c0_0,c1_0,c2_0,c3_0\nc0,c0_0,c1_0,c1_1,c3_0\n", "line 2"),  # repeated foil label
            ("c0,c0_0,c1_0,c2_0,nope\n", "line 1"),
            ("c1,c0_0,c1_0,c2_0,c3_0\n", "line 1"),  # target ref has another label
        ],
    )
    def test_malformed_rejected_at_load(self, text, match):
        with pytest.raises(TrialError, match=match):
            parse_trials(text, _label_map())

    def test_record_needs_three_foils(self):
        with pytest.raises(TrialError):
            TrialRecord("a", "x", ("y", "z"))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["exp", "cube", "affine", "atan"]))
def test_monotone_transform_keeps_outcomes(seed, kind):
    labels = _label_map()
    trials = make_trials(labels, 50, seed=seed % 1000)
    table = {ref: float(v) for ref, v in zip(sorted(labels), np.random.default_rng(seed).normal(size=len(labels)))}
    f = {"exp": np.exp, "cube": lambda x: x**3, "affine": lambda x: 2.5 * x + 7, "atan": np.arctan}[kind]
    base = trial_outcomes(lambda lab, ref: table[ref], trials)
    assert trial_outcomes(lambda lab, ref: float(f(table[ref])), trials) == base


class TestImageAdapter:
    def test_constant_frames_equal_single_frame(self, rng):
        w = rng.normal(size=(5, 3 * 8 * 8))
        scorer = lambda frame: w @ frame.ravel()
        img = rng.random((3, 8, 8))
        clip = np.repeat(img[:, None], 6, axis=1)
        np.testing.assert_allclose(image_model_adapter(scorer)(clip), scorer(img))

    def test_hand_built_mean(self):
        scorer = lambda frame: np.array([frame.sum(), -frame.max()])
        clip = np.zeros((1, 2, 1, 2))
        clip[0, 0] = [[1.0, 2.0]]
        clip[0, 1] = [[3.0, 5.0]]
        # frame 0 -> (3, -2), frame 1 -> (8, -5); mean (5.5, -3.5)
        np.testing.assert_allclose(image_model_adapter(scorer)(clip), [5.5, -3.5])

    def test_frame_order_does_not_matter(self, rng):
        w = rng.normal(size=(4, 3 * 4 * 4))
        scorer = lambda frame: np.tanh(w @ frame.ravel())
        clip = rng.random((3, 5, 4, 4))
        perm = rng.permutation(5)
        np.testing.assert_allclose(image_model_adapter(scorer)(clip), image_model_adapter(scorer)(clip[:, perm]))


def _tiny_multimodal(seed=0):
    torch.manual_seed(seed)
    vocab = Vocabulary(["a", "b", "c", "d"])
    model = MultimodalModel(VideoMAE.for_clip_shape(TINY, 2, 32, 32), len(vocab), dim=8)
    rng = np.random.default_rng(seed)
    exemplars = {f"{w}{i}": rng.integers(0, 256, (32, 32, 3), dtype=np.uint8) for w in "abcd" for i in range(3)}
    labels = {ref: ref[0] for ref in exemplars}
    return model, vocab, exemplars, labels


class TestMultimodalScorer:
    def test_positive_rescaling_keeps_outcomes(self):
        model, vocab, exemplars, labels = _tiny_multimodal()
        trials = make_trials(labels, 60, seed=0)
        before = trial_outcomes(multimodal_scorer(model, vocab, exemplars), trials)
        with torch.no_grad():
            model.projection.linear.weight.mul_(3.7)
            model.projection.linear.bias.mul_(3.7)
            model.text.embedding.weight.mul_(0.2)
        assert trial_outcomes(multimodal_scorer(model, vocab, exemplars), trials) == before

    def test_scores_are_cosines(self):
        model, vocab, exemplars, _ = _tiny_multimodal()
        score = multimodal_scorer(model, vocab, exemplars)
        values = [score(w, ref) for w in "abcd" for ref in exemplars]
        assert all(-1 - 1e-6 <= v <= 1 + 1e-6 for v in values)

    def test_image_and_stacked_clip_paths_agree(self):
        model, vocab, exemplars, _ = _tiny_multimodal()
        stacked = {ref: stack_image(img, 2) for ref, img in exemplars.items()}
        a = multimodal_scorer(model, vocab, exemplars)
        b = multimodal_scorer(model, vocab, stacked)
        for ref in exemplars:
            assert a("b", ref) == pytest.approx(b("b", ref), abs=1e-6)


class TestFeatures:
    def test_deterministic_and_sized(self, rng):
        torch.manual_seed(0)
        enc = VideoMAE.for_clip_shape(TINY, 2, 32, 32)
        clips = [rng.random((3, 2, 32, 32), dtype=np.float32) for _ in range(5)]
        a = extract_features(enc, clips, batch_size=2)
        b = extract_features(enc, clips, batch_size=3)
        assert a.shape == (5, TINY.embed_dim)
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestReport:
    def test_empty_results(self, tmp_path):
        paths = emit_report({}, tmp_path)
        assert "plot" not in paths
        assert paths["per_class"].read_text().splitlines() == ["model,label,n,correct,accuracy"]

    def test_weighted_per_class_equals_overall(self, rng):
        outcomes = [(f"l{int(rng.integers(5))}", bool(rng.random() < 0.6)) for _ in range(300)]
        rows = per_class_table({"m": outcomes})
        overall = sum(ok for _, ok in outcomes) / len(outcomes)
        assert sum(n * acc for _, _, n, _, acc in rows) / sum(n for _, _, n, _, _ in rows) == pytest.approx(overall)

    def test_rerun_is_byte_identical(self, tmp_path, rng):
        results = {"m": [(f"l{i % 4}", bool(i % 3)) for i in range(40)], "n": [("l0", True)]}
        a = emit_report(results, tmp_path / "a")
        b = emit_report(results, tmp_path / "b")
        for key in ("summary", "per_class", "plot"):
            assert a[key].read_bytes() == b[key].read_bytes()
        assert len(read_per_class(a["per_class"])) == 5

    def test_run_dir_by_hash(self, tmp_path):
        assert run_dir(tmp_path, {"a": 1}) == run_dir(tmp_path, {"a": 1})
        assert run_dir(tmp_path, {"a": 1}) != run_dir(tmp_path, {"a": 2})
        assert len(config_hash({"x": [1, 2]})) == 12


class TestChance:
    """Random scorers land on chance within a 3-sigma binomial band at N >= 1000."""

    def test_random_trial_scorer(self):
        labels = _label_map(8, 20)
        trials = make_trials(labels, 2000, seed=0)
        rng = np.random.default_rng(0)
        acc = nway_trial_eval(lambda lab, ref: float(rng.random()), trials)
        assert abs(acc - 0.25) <= _binomial_band(0.25, 2000)

    @pytest.mark.parametrize("k", [2, 5, 12])
    def test_random_probe_logits(self, k):
        rng = np.random.default_rng(k)
        n = 2000
        targets = rng.integers(0, k, n)
        acc = topk_correct(rng.normal(size=(n, k)), targets, 1).mean()
        assert abs(acc - 1 / k) <= _binomial_band(1 / k, n)

    def test_probe_on_shuffled_labels(self):
        rng = np.random.default_rng(5)
        k, n = 4, 2500
        feats = rng.normal(size=(n, 16))
        labels = rng.permutation(np.repeat(np.arange(k), n // k)).tolist()
        split = make_split(n, (0.5, 0.1, 0.4), seed=0)
        res = linear_probe(feats, labels, split, epochs=50)
        assert abs(res.acc1 - 1 / k) <= _binomial_band(1 / k, len(split.test))
