from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from blindspot.gradcheck import central_difference, relative_error
from blindspot.mae import (
    InputError,
    PretrainConfig,
    VideoMAE,
    evaluate_reconstruction,
    fixed_mask_source,
    load_model,
    masked_mse_grad,
    masked_mse_loss,
    masked_mse_numpy,
    patchify,
    pretrain,
    random_tube_source,
    reconstruction_targets,
    save_model,
    unpatchify,
)
from blindspot.masks import FrameGeometry, PatchMask, Variant, build_mask, expand_temporal

from conftest import TINY, random_clips


class TestTokenize:
    def test_full_size_token_count(self):
        clip = torch.zeros(3, 16, 224, 224)
        assert patchify(clip).shape == (1568, 1536)

    def test_single_cube(self):
        assert patchify(torch.zeros(3, 2, 16, 16)).shape == (1, 1536)

    def test_round_trip_is_exact(self):
        clip = torch.from_numpy(random_clips(1, frames=4, size=48)[0])
        back = unpatchify(patchify(clip), tuple(clip.shape))
        assert torch.equal(back, clip)

    def test_token_order_is_slot_major(self):
        clip = torch.zeros(3, 4, 32, 32)
        clip[:, 2:4, 16:32, 0:16] = 1.0  # second slot, bottom-left patch
        tokens = patchify(clip)
        hot = tokens.abs().sum(dim=1).nonzero().ravel().tolist()
        assert hot == [1 * 4 + 1 * 2 + 0]

    def test_rejects_indivisible(self):
        with pytest.raises(InputError):
            patchify(torch.zeros(3, 3, 32, 32))

    def test_model_rejects_wrong_token_count(self):
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32)
        with pytest.raises(InputError):
            model.tokenize(torch.zeros(1, 3, 2, 48, 48))


class TestVisibility:
    def test_masked_patches_do_not_reach_latents(self):
        torch.manual_seed(0)
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32).eval()
        grid = np.array([[True, False], [False, True]])
        token_mask = torch.from_numpy(expand_temporal(grid, 1))
        a = torch.from_numpy(random_clips(1)[0])
        b = a.clone()
        b[:, :, 0:16, 0:16] = 5.0  # masked top-left patch
        b[:, :, 16:32, 16:32] = -3.0  # masked bottom-right patch
        za = model.encode_visible(model.tokenize(a), token_mask)
        zb = model.encode_visible(model.tokenize(b), token_mask)
        assert torch.equal(za, zb)

    def test_all_masked_is_rejected(self):
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32)
        with pytest.raises(InputError):
            model(torch.zeros(1, 3, 2, 32, 32), torch.ones(4, dtype=torch.bool))

    def test_unequal_counts_in_batch_rejected(self):
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32)
        m = torch.tensor([[True, False, False, False], [True, True, False, False]])
        with pytest.raises(InputError):
            model(torch.zeros(2, 3, 2, 32, 32), m)

    def test_prediction_shape(self):
        model = VideoMAE.for_clip_shape(TINY, 4, 32, 32)
        m = torch.tensor([True, False, True, False] * 2)
        assert model(torch.zeros(3, 3, 4, 32, 32), m).shape == (3, 4, TINY.patch_dim)


class TestLoss:
    def test_targets_are_normalized_per_token(self):
        clips = torch.from_numpy(random_clips(2))
        t = reconstruction_targets(clips, torch.tensor([True, True, False, True]))
        assert t.shape == (2, 3, 1536)
        np.testing.assert_allclose(t.mean(dim=-1).numpy(), 0, atol=1e-5)
        np.testing.assert_allclose(t.var(dim=-1, unbiased=False).numpy(), 1, atol=1e-3)

    def test_torch_and_numpy_agree(self, rng):
        p, t = rng.normal(size=(2, 5, 7)), rng.normal(size=(2, 5, 7))
        assert masked_mse_loss(torch.from_numpy(p), torch.from_numpy(t)).item() == pytest.approx(masked_mse_numpy(p, t))

    def test_empty_set_warns_and_is_zero(self):
        with pytest.warns(RuntimeWarning):
            assert masked_mse_loss(torch.zeros(1, 0, 4), torch.zeros(1, 0, 4)).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            masked_mse_loss(torch.zeros(1, 2, 4), torch.zeros(1, 3, 4))


class TestGradients:
    """Closed-form and autograd gradients against central differences in float64."""

    @pytest.mark.parametrize("seed", range(20))
    def test_closed_form_mse(self, seed):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(2, 9)))
        pred, target = rng.normal(size=shape), rng.normal(size=shape)
        numeric = central_difference(lambda p: masked_mse_numpy(p, target), pred)
        assert relative_error(masked_mse_grad(pred, target), numeric) <= 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_autograd_through_model(self, seed):
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32).double()
        clips = torch.from_numpy(rng.random((2, 3, 2, 32, 32)))
        n_masked = int(rng.integers(1, 4))
        flat = np.zeros(4, dtype=bool)
        flat[rng.permutation(4)[:n_masked]] = True
        mask = torch.from_numpy(flat)
        target = reconstruction_targets(clips, mask)

        # a random slice of decoder-head and patch-embedding weights
        params = [model.head.weight, model.patch_embed.weight]
        picks = [(p, tuple(int(rng.integers(s)) for s in p.shape)) for p in params for _ in range(3)]
        model.zero_grad()
        masked_mse_loss(model(clips, mask), target).backward()
        analytic = np.array([p.grad[i].item() for p, i in picks])

        def f(x):
            with torch.no_grad():
                for (p, i), v in zip(picks, x):
                    p[i] = v
                return masked_mse_loss(model(clips, mask), target).item()

        x0 = np.array([p[i].item() for p, i in picks])
        numeric = central_difference(f, x0)
        f(x0)
        assert relative_error(analytic, numeric) <= 1e-4


def _tiny_dataset(n=16):
    # smooth clips so the tiny model has something learnable
    rng = np.random.default_rng(0)
    yy, xx = np.mgrid[0:32, 0:32] / 32.0
    out = []
    for _ in range(n):
        a, b, c = rng.uniform(-1, 1, 3)
        img = 0.5 + 0.4 * np.sin(3 * a * xx + 3 * b * yy + c)
        out.append(np.broadcast_to(img, (3, 2, 32, 32)).astype(np.float32).copy())
    return out


class TestPretrain:
    def test_loss_drops(self, tmp_path):
        data = _tiny_dataset()
        cfg = PretrainConfig(TINY, steps=60, batch_size=8, lr=1e-3)
        res = pretrain(data, cfg, random_tube_source(FrameGeometry(32, 32), 0.5), checkpoint_path=tmp_path / "m.npz")
        first = np.mean([l for _, l in res.losses[:5]])
        last = np.mean([l for _, l in res.losses[-5:]])
        assert last < first
        assert res.checkpoint_path.exists()

    def test_reproducible(self):
        data = _tiny_dataset(8)
        cfg = PretrainConfig(TINY, steps=5, batch_size=4)
        src = random_tube_source(FrameGeometry(32, 32), 0.5, seed=1)
        assert pretrain(data, cfg, src).losses == pretrain(data, cfg, src).losses

    def test_rejects_empty_mask(self):
        empty = PatchMask(np.zeros((2, 2), dtype=bool), Variant.BLINDSPOT)
        with pytest.raises(InputError):
            pretrain(_tiny_dataset(4), PretrainConfig(TINY, steps=1), fixed_mask_source(empty))

    def test_rejects_mismatched_grid(self):
        with pytest.raises(InputError):
            pretrain(_tiny_dataset(4), PretrainConfig(TINY, steps=1), fixed_mask_source(build_mask("blindspot")))

    def test_rejects_empty_dataset(self):
        with pytest.raises(InputError):
            pretrain([], PretrainConfig(TINY, steps=1), random_tube_source(FrameGeometry(32, 32), 0.5))

    def test_checkpoint_round_trip(self, tmp_path):
        torch.manual_seed(0)
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32)
        save_model(tmp_path / "m.npz", model, {"kind": "pretrain"})
        loaded, manifest = load_model(tmp_path / "m.npz")
        assert manifest["n_tokens"] == 4
        x = torch.from_numpy(random_clips(2))
        assert torch.equal(loaded.features(x), model.eval().features(x))

    def test_evaluate_reconstruction_matches_loss(self):
        torch.manual_seed(0)
        model = VideoMAE.for_clip_shape(TINY, 2, 32, 32).eval()
        clips = random_clips(3)
        mask = build_mask("random_tube", FrameGeometry(32, 32), ratio=0.5, seed=0)
        m = torch.from_numpy(expand_temporal(mask, 1))
        x = torch.from_numpy(clips)
        with torch.no_grad():
            ref = masked_mse_loss(model(x, m), reconstruction_targets(x, m)).item()
        assert evaluate_reconstruction(model, list(clips), [mask] * 3) == pytest.approx(ref, rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(t=st.sampled_from([2, 4, 6]), h=st.integers(1, 3), w=st.integers(1, 3), seed=st.integers(0, 1000))
def test_patchify_inverse_property(t, h, w, seed):
    clip = torch.from_numpy(np.random.default_rng(seed).random((3, t, 16 * h, 16 * w)))
    assert torch.equal(unpatchify(patchify(clip), tuple(clip.shape)), clip)
