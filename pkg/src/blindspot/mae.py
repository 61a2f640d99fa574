"""Toy-scale masked video autoencoder.

Clips are ``(C, T, H, W)`` (or batched ``(B, C, T, H, W)``) float tensors that
have already been normalized. Each ``2 x 16 x 16`` spatio-temporal cube becomes
one token; tokens are ordered slot-major ``(t, row, col)`` so a flat token mask
from :func:`blindspot.masks.expand_temporal` lines up with them directly.

The patch projection is a linear map on flattened cubes, which is the same
operator as a ``conv3d`` whose kernel equals its stride.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .masks import FrameGeometry, PatchMask, build_random_tube_mask, expand_temporal

log = logging.getLogger(__name__)


class InputError(ValueError):
    """Tensor shapes or masks that do not fit the model."""


class TrainingError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    embed_dim: int = 192
    depth: int = 4
    n_heads: int = 3
    decoder_dim: int = 96
    decoder_depth: int = 1
    decoder_heads: int = 3
    mlp_ratio: float = 4.0
    patch_size: int = 16
    tubelet: int = 2
    in_chans: int = 3
    learnable_pos: bool = False

    def __post_init__(self) -> None:
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.decoder_dim % self.decoder_heads:
            raise ValueError("decoder_dim not divisible by decoder_heads")
        if min(self.depth, self.decoder_depth, self.patch_size, self.tubelet, self.in_chans) < 1:
            raise ValueError("depths and patch sizes must be >= 1")

    @property
    def patch_dim(self) -> int:
        return self.tubelet * self.patch_size * self.patch_size * self.in_chans


# ---------------------------------------------------------------------------
# rearrangement


def _as_batch(clips: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if clips.dim() == 4:
        return clips.unsqueeze(0), True
    if clips.dim() == 5:
        return clips, False
    raise InputError(f"expected (C,T,H,W) or (B,C,T,H,W), got shape {tuple(clips.shape)}")


def patchify(clips: torch.Tensor, patch_size: int = 16, tubelet: int = 2) -> torch.Tensor:
    """``(B, C, T, H, W)`` -> ``(B, N, tubelet*p*p*C)``; unbatched input stays unbatched."""
    x, squeeze = _as_batch(clips)
    b, c, t, h, w = x.shape
    p = patch_size
    if t % tubelet or h % p or w % p:
        raise InputError(f"clip {c}x{t}x{h}x{w} not divisible into {tubelet}x{p}x{p} cubes")
    x = x.reshape(b, c, t // tubelet, tubelet, h // p, p, w // p, p)
    # -> b, t', h', w', tubelet, p, p, c
    x = x.permute(0, 2, 4, 6, 3, 5, 7, 1)
    x = x.reshape(b, (t // tubelet) * (h // p) * (w // p), tubelet * p * p * c)
    return x[0] if squeeze else x


def unpatchify(
    tokens: torch.Tensor, shape: Tuple[int, int, int, int], patch_size: int = 16, tubelet: int = 2
) -> torch.Tensor:
    """Inverse of :func:`patchify`; ``shape`` is the clip's ``(C, T, H, W)``."""
    squeeze = tokens.dim() == 2
    x = tokens.unsqueeze(0) if squeeze else tokens
    c, t, h, w = shape
    p = patch_size
    b = x.shape[0]
    x = x.reshape(b, t // tubelet, h // p, w // p, tubelet, p, p, c)
    x = x.permute(0, 7, 1, 4, 2, 5, 3, 6).reshape(b, c, t, h, w)
    return x[0] if squeeze else x


def sinusoid_table(n_positions: int, dim: int) -> torch.Tensor:
    """Fixed 1-D sinusoidal table, ``(n_positions, dim)``."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.from_numpy(table).float()


# ---------------------------------------------------------------------------
# transformer pieces


class Attention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.scale = (dim // n_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.n_heads, d // self.n_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm transformer block with joint space-time attention over all tokens."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def _init_weights(m: nn.Module) -> None:
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


# ---------------------------------------------------------------------------
# model


class VideoMAE(nn.Module):
    def __init__(self, config: EncoderConfig = EncoderConfig(), n_tokens: int = 1568):
        super().__init__()
        self.config = config
        self.n_tokens = n_tokens
        c = config
        self.patch_embed = nn.Linear(c.patch_dim, c.embed_dim)
        self.blocks = nn.ModuleList(Block(c.embed_dim, c.n_heads, c.mlp_ratio) for _ in range(c.depth))
        self.norm = nn.LayerNorm(c.embed_dim, eps=1e-6)

        self.decoder_embed = nn.Linear(c.embed_dim, c.decoder_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, c.decoder_dim))
        self.decoder_blocks = nn.ModuleList(
            Block(c.decoder_dim, c.decoder_heads, c.mlp_ratio) for _ in range(c.decoder_depth)
        )
        self.decoder_norm = nn.LayerNorm(c.decoder_dim, eps=1e-6)
        self.head = nn.Linear(c.decoder_dim, c.patch_dim)

        pos = sinusoid_table(n_tokens, c.embed_dim)
        dec_pos = sinusoid_table(n_tokens, c.decoder_dim)
        if c.learnable_pos:
            self.pos_embed = nn.Parameter(pos.clone())
            self.decoder_pos_embed = nn.Parameter(dec_pos.clone())
        else:
            self.register_buffer("pos_embed", pos, persistent=False)
            self.register_buffer("decoder_pos_embed", dec_pos, persistent=False)

        self.apply(_init_weights)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    @classmethod
    def for_clip_shape(cls, config: EncoderConfig, frames: int, height: int, width: int) -> "VideoMAE":
        n = (frames // config.tubelet) * (height // config.patch_size) * (width // config.patch_size)
        return cls(config, n_tokens=n)

    # -- stages ------------------------------------------------------------

    def tokenize(self, clips: torch.Tensor) -> torch.Tensor:
        """Cube embeddings plus positional embeddings, ``(B, N, embed_dim)``."""
        x, squeeze = _as_batch(clips)
        c = self.config
        if x.shape[1] != c.in_chans:
            raise InputError(f"expected {c.in_chans} channels, got {x.shape[1]}")
        patches = patchify(x, c.patch_size, c.tubelet)
        if patches.shape[1] != self.n_tokens:
            raise InputError(f"clip gives {patches.shape[1]} tokens, model expects {self.n_tokens}")
        tokens = self.patch_embed(patches) + self.pos_embed.to(patches.dtype)
        return tokens[0] if squeeze else tokens

    def _check_mask(self, token_mask: torch.Tensor, batch: int) -> torch.Tensor:
        m = torch.as_tensor(token_mask, dtype=torch.bool)
        if m.dim() == 1:
            m = m.unsqueeze(0).expand(batch, -1)
        if m.shape != (batch, self.n_tokens):
            raise InputError(f"mask shape {tuple(m.shape)} does not match ({batch}, {self.n_tokens})")
        counts = m.sum(dim=1)
        if not bool((counts == counts[0]).all()):
            raise InputError("every clip in a batch must mask the same number of tokens")
        return m

    def run_encoder(self, x: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def encode_visible(self, tokens: torch.Tensor, token_mask) -> torch.Tensor:
        """Run the encoder on unmasked tokens only; returns ``(B, n_visible, D)``."""
        squeeze = tokens.dim() == 2
        x = tokens.unsqueeze(0) if squeeze else tokens
        m = self._check_mask(token_mask, x.shape[0])
        n_visible = int((~m[0]).sum())
        if n_visible == 0:
            raise InputError("all tokens are masked")
        visible = x[~m].reshape(x.shape[0], n_visible, x.shape[-1])
        out = self.run_encoder(visible)
        return out[0] if squeeze else out

    def reconstruct(self, latents: torch.Tensor, token_mask) -> torch.Tensor:
        """Predicted pixel vectors for masked tokens, ``(B, n_masked, patch_dim)``."""
        squeeze = latents.dim() == 2
        z = latents.unsqueeze(0) if squeeze else latents
        b = z.shape[0]
        m = self._check_mask(token_mask, b)
        n_masked = int(m[0].sum())
        if z.shape[1] != self.n_tokens - n_masked:
            raise InputError(
                f"{z.shape[1]} latents do not match {self.n_tokens - n_masked} visible tokens"
            )
        if n_masked == 0:
            out = z.new_zeros(b, 0, self.config.patch_dim)
            return out[0] if squeeze else out
        y = self.decoder_embed(z)
        full = self.mask_token.to(y.dtype).expand(b, self.n_tokens, -1).clone()
        full[~m] = y.reshape(-1, y.shape[-1])
        full = full + self.decoder_pos_embed.to(y.dtype)
        for blk in self.decoder_blocks:
            full = blk(full)
        full = self.decoder_norm(full)
        out = self.head(full[m].reshape(b, n_masked, -1))
        return out[0] if squeeze else out

    def forward(self, clips: torch.Tensor, token_mask) -> torch.Tensor:
        tokens = self.tokenize(clips)
        return self.reconstruct(self.encode_visible(tokens, token_mask), token_mask)

    @torch.no_grad()
    def features(self, clips: torch.Tensor) -> torch.Tensor:
        """Mean-pooled encoder output over all tokens, ``(B, embed_dim)``."""
        x, squeeze = _as_batch(clips)
        z = self.run_encoder(self.tokenize(x)).mean(dim=1)
        return z[0] if squeeze else z


# ---------------------------------------------------------------------------
# loss


def reconstruction_targets(
    clips: torch.Tensor, token_mask, patch_size: int = 16, tubelet: int = 2, eps: float = 1e-6
) -> torch.Tensor:
    """Per-token normalized pixel vectors of the masked tokens, ``(B, n_masked, patch_dim)``."""
    x, squeeze = _as_batch(clips)
    patches = patchify(x, patch_size, tubelet)
    mean = patches.mean(dim=-1, keepdim=True)
    var = patches.var(dim=-1, unbiased=False, keepdim=True)
    normed = (patches - mean) / torch.sqrt(var + eps)
    m = torch.as_tensor(token_mask, dtype=torch.bool)
    if m.dim() == 1:
        m = m.unsqueeze(0).expand(x.shape[0], -1)
    n_masked = int(m[0].sum())
    out = normed[m].reshape(x.shape[0], n_masked, -1)
    return out[0] if squeeze else out


def masked_mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over masked tokens and their elements."""
    if pred.shape != target.shape:
        raise InputError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.numel() == 0:
        warnings.warn("empty masked set; loss defined as 0", RuntimeWarning, stacklevel=2)
        return pred.sum() * 0.0
    return ((pred - target) ** 2).mean()


def masked_mse_numpy(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    return float(np.mean((pred - target) ** 2)) if pred.size else 0.0


def masked_mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Closed-form gradient of :func:`masked_mse_numpy` with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - target) / max(pred.size, 1)


# ---------------------------------------------------------------------------
# pretraining

MaskSource = Callable[[int, int], PatchMask]
"""``(step, index_in_batch) -> PatchMask``."""


def fixed_mask_source(mask: PatchMask) -> MaskSource:
    return lambda step, index: mask


def random_tube_source(frame: FrameGeometry, ratio: float = 0.9, seed: int = 0) -> MaskSource:
    """A fresh seeded tube mask for every clip of every step."""

    def source(step: int, index: int) -> PatchMask:
        s = int(np.random.SeedSequence([seed, step, index]).generate_state(1)[0])
        return build_random_tube_mask(frame, ratio, s)

    return source


@dataclass
class PretrainConfig:
    model: EncoderConfig = field(default_factory=EncoderConfig)
    steps: int = 200
    batch_size: int = 16
    lr: float = 1.5e-4
    weight_decay: float = 0.05
    betas: Tuple[float, float] = (0.9, 0.95)
    seed: int = 0


@dataclass
class PretrainResult:
    model: VideoMAE
    losses: List[Tuple[int, float]]
    manifest: Dict
    checkpoint_path: Optional[Path] = None


def _token_mask_batch(masks: Sequence[PatchMask], slots: int) -> torch.Tensor:
    return torch.from_numpy(np.stack([expand_temporal(m, slots) for m in masks]))


def pretrain(
    dataset: Sequence,
    config: PretrainConfig,
    mask_source: MaskSource,
    transform: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
    checkpoint_path: Optional[str | Path] = None,
    variant: str = "",
) -> PretrainResult:
    """Masked-reconstruction pretraining with AdamW.

    ``dataset`` is an indexable collection of ``(C, T, H, W)`` clips. The
    optional ``transform(clip, rng)`` runs per sample (e.g. augmentation).
    Batches are drawn from a seeded permutation, so a fixed seed reproduces the
    loss curve exactly on one machine.
    """
    if len(dataset) == 0:
        raise InputError("empty dataset")
    torch.manual_seed(config.seed)
    c, t, h, w = np.asarray(dataset[0]).shape
    mc = config.model
    model = VideoMAE.for_clip_shape(mc, t, h, w)
    slots = t // mc.tubelet

    probe = mask_source(0, 0)
    if probe.shape != (h // mc.patch_size, w // mc.patch_size):
        raise InputError(f"mask grid {probe.shape} does not match clip {h}x{w}")
    if probe.n_masked == 0:
        raise InputError("pretraining with an empty mask is not allowed")
    if probe.n_masked == probe.grid.size:
        raise InputError("pretraining with a fully masked grid is not allowed")

    opt = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay, betas=config.betas
    )
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    order: List[int] = []
    losses: List[Tuple[int, float]] = []

    model.train()
    for step in range(config.steps):
        idx = []
        while len(idx) < config.batch_size:
            if not order:
                order = torch.randperm(len(dataset), generator=gen).tolist()
            idx.append(order.pop())
        clips = []
        for i in idx:
            clip = np.asarray(dataset[i], dtype=np.float32)
            if transform is not None:
                clip = transform(clip, rng)
            clips.append(clip)
        x = torch.from_numpy(np.stack(clips))
        token_mask = _token_mask_batch([mask_source(step, j) for j in range(len(idx))], slots)

        pred = model(x, token_mask)
        target = reconstruction_targets(x, token_mask, mc.patch_size, mc.tubelet)
        loss = masked_mse_loss(pred, target)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss {loss.item()} at step {step}; "
                f"pred range [{pred.min().item():.3g}, {pred.max().item():.3g}]"
            )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append((step, float(loss.item())))
        if step % 50 == 0:
            log.info("pretrain step %d loss %.4f", step, losses[-1][1])

    manifest = {
        "kind": "pretrain",
        "config": asdict(config),
        "clip_shape": [c, t, h, w],
        "n_tokens": model.n_tokens,
        "variant": variant or probe.describe(),
        "step": config.steps,
        "seed": config.seed,
    }
    path = None
    if checkpoint_path is not None:
        path = save_model(checkpoint_path, model, manifest)
    return PretrainResult(model, losses, manifest, path)


@torch.no_grad()
def evaluate_reconstruction(
    model: VideoMAE,
    clips: Sequence[np.ndarray],
    masks: Sequence[PatchMask],
    batch_size: int = 16,
) -> float:
    """Masked MSE of ``model`` over ``clips``, clip ``i`` masked by ``masks[i]``."""
    was_training = model.training
    model.eval()
    c = model.config
    total, count = 0.0, 0
    for i in range(0, len(clips), batch_size):
        x = torch.from_numpy(np.stack([np.asarray(v, dtype=np.float32) for v in clips[i : i + batch_size]]))
        slots = x.shape[2] // c.tubelet
        m = _token_mask_batch(masks[i : i + batch_size], slots)
        pred = model(x, m)
        target = reconstruction_targets(x, m, c.patch_size, c.tubelet)
        total += float(((pred - target) ** 2).sum())
        count += pred.numel()
    model.train(was_training)
    return total / max(count, 1)


def save_model(path: str | Path, model: VideoMAE, manifest: Dict) -> Path:
    manifest = dict(manifest)
    manifest.setdefault("model", asdict(model.config))
    manifest["n_tokens"] = model.n_tokens
    return ckpt.save_checkpoint(path, ckpt.state_to_arrays(model, "mae."), manifest)


def load_model(path: str | Path) -> Tuple[VideoMAE, Dict]:
    arrays, manifest = ckpt.load_checkpoint(path)
    cfg = manifest.get("model") or manifest["config"]["model"]
    model = VideoMAE(EncoderConfig(**cfg), n_tokens=manifest["n_tokens"])
    model.load_state_dict(ckpt.arrays_to_state(arrays, "mae."))
    model.eval()
    return model, manifest
