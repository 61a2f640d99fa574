"""Clip augmentation for pretraining, probe training and evaluation.

Every transform is applied identically to all frames of a clip. Clips are
float32 ``(3, T, H, W)`` arrays in [0, 1] before normalization.
"""

from __future__ import annotations

import enum
import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
MULTISCALE_SCALES = (1.0, 0.875, 0.75, 0.66)


class Mode(str, enum.Enum):
    PRETRAIN = "pretrain"
    TRAIN_EVAL_HEAD = "train_eval_head"
    EVAL = "eval"


def normalize(clip: np.ndarray, mean: Sequence[float] = IMAGENET_MEAN, std: Sequence[float] = IMAGENET_STD) -> np.ndarray:
    m = np.asarray(mean, dtype=np.float32)[:, None, None, None]
    s = np.asarray(std, dtype=np.float32)[:, None, None, None]
    return ((clip - m) / s).astype(np.float32)


def resize(clip: np.ndarray, height: int, width: int) -> np.ndarray:
    if clip.shape[2:] == (height, width):
        return clip
    x = torch.from_numpy(np.ascontiguousarray(clip)).permute(1, 0, 2, 3)
    x = F.interpolate(x, size=(height, width), mode="bilinear", align_corners=False, antialias=True)
    return x.permute(1, 0, 2, 3).numpy()


def resize_short_side(clip: np.ndarray, size: int) -> np.ndarray:
    h, w = clip.shape[2:]
    if min(h, w) == size:
        return clip
    if h <= w:
        return resize(clip, size, int(round(w * size / h)))
    return resize(clip, int(round(h * size / w)), size)


def center_crop(clip: np.ndarray, size: int) -> np.ndarray:
    h, w = clip.shape[2:]
    if h < size or w < size:
        raise ValueError(f"clip {h}x{w} smaller than crop {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return clip[:, :, top : top + size, left : left + size]


def multiscale_crop(
    clip: np.ndarray,
    size: int,
    rng: np.random.Generator,
    scales: Sequence[float] = MULTISCALE_SCALES,
    max_distort: int = 1,
) -> np.ndarray:
    """Random crop whose sides are picked from ``scales`` of the short side, resized to ``size``."""
    h, w = clip.shape[2:]
    base = min(h, w)
    sizes = [int(base * s) for s in scales]
    pairs = [
        (sizes[i], sizes[j])
        for i in range(len(sizes))
        for j in range(len(sizes))
        if abs(i - j) <= max_distort
    ]
    ch, cw = pairs[int(rng.integers(len(pairs)))]
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return resize(clip[:, :, top : top + ch, left : left + cw], size, size)


def random_resized_crop(
    clip: np.ndarray,
    size: int,
    rng: np.random.Generator,
    scale: Tuple[float, float] = (0.25, 1.0),
    ratio: Tuple[float, float] = (3 / 4, 4 / 3),
) -> np.ndarray:
    h, w = clip.shape[2:]
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(*scale)
        aspect = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return resize(clip[:, :, top : top + ch, left : left + cw], size, size)
    return resize(center_crop(clip, min(h, w)), size, size)


def _gray(clip: np.ndarray) -> np.ndarray:
    return (0.299 * clip[0] + 0.587 * clip[1] + 0.114 * clip[2])[None]


def _blend(a: np.ndarray, b: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(b + factor * (a - b), 0.0, 1.0)


def adjust_brightness(clip, factor):
    return _blend(clip, np.zeros_like(clip), factor)


def adjust_contrast(clip, factor):
    return _blend(clip, np.full_like(clip, _gray(clip).mean()), factor)


def adjust_saturation(clip, factor):
    return _blend(clip, np.broadcast_to(_gray(clip), clip.shape), factor)


def color_jitter(clip: np.ndarray, rng: np.random.Generator, strength: float = 0.4) -> np.ndarray:
    ops = [adjust_brightness, adjust_contrast, adjust_saturation]
    for i in rng.permutation(len(ops)):
        clip = ops[i](clip, rng.uniform(1 - strength, 1 + strength))
    return clip.astype(np.float32)


def _affine(clip: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(clip)).permute(1, 0, 2, 3)
    theta = torch.from_numpy(matrix.astype(np.float32))[None].expand(x.shape[0], 2, 3)
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return out.permute(1, 0, 2, 3).numpy()


def _sharpness(clip, factor):
    k = torch.tensor([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=torch.float32) / 13
    x = torch.from_numpy(np.ascontiguousarray(clip)).reshape(-1, 1, *clip.shape[2:])
    blurred = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k[None, None]).reshape(clip.shape)
    return _blend(clip, blurred.numpy(), factor)


def _autocontrast(clip, _):
    lo = clip.min(axis=(1, 2, 3), keepdims=True)
    hi = clip.max(axis=(1, 2, 3), keepdims=True)
    return np.where(hi > lo, (clip - lo) / np.maximum(hi - lo, 1e-6), clip)


def _posterize(clip, m):
    bits = max(1, 8 - int(round(4 * m)))
    q = 2 ** (8 - bits)
    return np.floor(clip * 255 / q) * q / 255


def _solarize(clip, m):
    return np.where(clip >= 1.0 - m, 1.0 - clip, clip)


def _signed(m: float, rng: np.random.Generator) -> float:
    return m if rng.random() < 0.5 else -m


# each op receives a magnitude in [0, 1]
_RAND_OPS: dict[str, Callable] = {
    "identity": lambda c, m, r: c,
    "autocontrast": lambda c, m, r: _autocontrast(c, m),
    "posterize": lambda c, m, r: _posterize(c, m),
    "solarize": lambda c, m, r: _solarize(c, m),
    "brightness": lambda c, m, r: adjust_brightness(c, 1 + _signed(0.9 * m, r)),
    "contrast": lambda c, m, r: adjust_contrast(c, 1 + _signed(0.9 * m, r)),
    "color": lambda c, m, r: adjust_saturation(c, 1 + _signed(0.9 * m, r)),
    "sharpness": lambda c, m, r: _sharpness(c, 1 + _signed(0.9 * m, r)),
    "rotate": lambda c, m, r: _affine(
        c, np.array([[math.cos(a := math.radians(_signed(30 * m, r))), -math.sin(a), 0], [math.sin(a), math.cos(a), 0]])
    ),
    "shear_x": lambda c, m, r: _affine(c, np.array([[1, _signed(0.3 * m, r), 0], [0, 1, 0]])),
    "shear_y": lambda c, m, r: _affine(c, np.array([[1, 0, 0], [_signed(0.3 * m, r), 1, 0]])),
    "translate_x": lambda c, m, r: _affine(c, np.array([[1, 0, _signed(0.45 * m, r)], [0, 1, 0]])),
    "translate_y": lambda c, m, r: _affine(c, np.array([[1, 0, 0], [0, 1, _signed(0.45 * m, r)]])),
}


def rand_augment(clip: np.ndarray, rng: np.random.Generator, n_ops: int = 2, magnitude: int = 7) -> np.ndarray:
    """``n_ops`` ops drawn uniformly from the op table at ``magnitude`` out of 10."""
    names = sorted(_RAND_OPS)
    for i in rng.choice(len(names), size=n_ops):
        clip = _RAND_OPS[names[i]](clip, magnitude / 10, rng)
    return np.clip(clip, 0.0, 1.0).astype(np.float32)


def random_erasing(
    clip: np.ndarray,
    rng: np.random.Generator,
    prob: float = 0.25,
    area: Tuple[float, float] = (0.02, 1 / 3),
    aspect: Tuple[float, float] = (0.3, 3.3),
) -> np.ndarray:
    """Overwrite one random rectangle (same on every frame) with Gaussian noise."""
    if rng.random() >= prob:
        return clip
    _, t, h, w = clip.shape
    for _ in range(10):
        target = h * w * rng.uniform(*area)
        ar = math.exp(rng.uniform(math.log(aspect[0]), math.log(aspect[1])))
        eh = int(round(math.sqrt(target * ar)))
        ew = int(round(math.sqrt(target / ar)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            clip = clip.copy()
            clip[:, :, top : top + eh, left : left + ew] = rng.standard_normal((3, 1, eh, ew)).astype(np.float32)
            return clip
    return clip


def augment(
    clip: np.ndarray,
    mode: Mode | str,
    rng: Optional[np.random.Generator] = None,
    size: int = 224,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
    crop: str = "multiscale",
) -> np.ndarray:
    """Mode-dependent transform chain ending in a normalized ``size x size`` clip.

    ``pretrain``: multiscale crop (or center crop when ``crop="center"``).
    ``eval``: short-side resize and center crop; deterministic.
    ``train_eval_head``: spatial sampling, rand-augment, color jitter, then
    random erasing after normalization.
    """
    mode = Mode(mode)
    if mode is not Mode.EVAL and rng is None:
        raise ValueError(f"mode {mode.value!r} needs an rng")
    if mode is Mode.EVAL or (mode is Mode.PRETRAIN and crop == "center"):
        out = center_crop(resize_short_side(clip, size), size)
        return normalize(out, mean, std)
    if mode is Mode.PRETRAIN:
        return normalize(multiscale_crop(clip, size, rng), mean, std)
    out = random_resized_crop(clip, size, rng)
    out = rand_augment(out, rng)
    out = color_jitter(out, rng)
    return random_erasing(normalize(out, mean, std), rng)
