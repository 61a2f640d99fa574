"""Video sources, 8-second chunking, strided clip sampling and image stacking.

Sources hold frames as ``(T, H, W, 3)`` arrays (uint8 or float in [0, 1]).
Clips handed to the model are float32 ``(3, T, H, W)`` in [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

log = logging.getLogger(__name__)

CHUNK_SECONDS = 8.0
CLIP_FRAMES = 16
CLIP_STRIDE = 4


class SourceError(IOError):
    pass


@dataclass
class VideoSource:
    path: str
    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise SourceError(f"{self.path}: frames must be (T, H, W, 3), got {self.frames.shape}")
        if self.fps <= 0:
            raise SourceError(f"{self.path}: fps must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class Chunk:
    source: VideoSource
    start: int
    n_frames: int

    @property
    def frames(self) -> np.ndarray:
        return self.source.frames[self.start : self.start + self.n_frames]


def load_source(path: str | Path) -> VideoSource:
    """Read a source saved by :func:`save_source` (``.npz`` with ``frames`` and ``fps``) or a bare ``.npy``."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            return VideoSource(str(path), np.load(path, allow_pickle=False))
        with np.load(path, allow_pickle=False) as data:
            return VideoSource(str(path), data["frames"], float(data["fps"]))
    except (OSError, KeyError, ValueError) as exc:
        raise SourceError(f"cannot read video source {path}: {exc}") from exc


def save_source(source: VideoSource, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, frames=source.frames, fps=np.float64(source.fps))
    return path


def chunk_video(source: VideoSource, seconds: float = CHUNK_SECONDS) -> List[Chunk]:
    """Contiguous fixed-length chunks; a shorter remainder is dropped."""
    size = int(round(seconds * source.fps))
    if size <= 0:
        raise ValueError("chunk length must be at least one frame")
    return [Chunk(source, s, size) for s in range(0, len(source) - size + 1, size)]


def _to_float(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames.astype(np.float32) / 255.0
    return frames.astype(np.float32, copy=False)


def frames_to_clip(frames: np.ndarray) -> np.ndarray:
    """``(T, H, W, 3)`` -> float32 ``(3, T, H, W)``."""
    return np.ascontiguousarray(_to_float(frames).transpose(3, 0, 1, 2))


def clip_span(n_frames: int = CLIP_FRAMES, stride: int = CLIP_STRIDE) -> int:
    return (n_frames - 1) * stride + 1


def sample_clip(
    frames: np.ndarray | Chunk,
    n_frames: int = CLIP_FRAMES,
    stride: int = CLIP_STRIDE,
    offset: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Optional[np.ndarray]:
    """Take ``n_frames`` frames ``stride`` apart.

    The start offset is ``offset`` if given, random when ``rng`` is given
    (training), and centered otherwise (evaluation). Returns ``None`` and logs
    when the input is too short.
    """
    if isinstance(frames, Chunk):
        frames = frames.frames
    span = clip_span(n_frames, stride)
    total = frames.shape[0]
    if total < span:
        log.info("skipping chunk of %d frames; %d needed", total, span)
        return None
    last = total - span
    if offset is None:
        offset = int(rng.integers(0, last + 1)) if rng is not None else last // 2
    if not 0 <= offset <= last:
        raise ValueError(f"offset {offset} outside [0, {last}]")
    return frames_to_clip(frames[offset : offset + span : stride])


def stack_image(image: np.ndarray, n_frames: int = CLIP_FRAMES) -> np.ndarray:
    """Repeat an ``(H, W, 3)`` image into a static ``(3, n_frames, H, W)`` clip."""
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    img = _to_float(image).transpose(2, 0, 1)
    return np.ascontiguousarray(np.repeat(img[:, None], n_frames, axis=1))
