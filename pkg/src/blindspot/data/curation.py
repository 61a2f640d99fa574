"""Similarity-based clip curation from labeled still images.

Each labeled image is matched to the most cosine-similar frame among every
``period``-th frame of all sources; a clip is cut around the match. Matches are
then filtered by a minimum similarity and, per source, by a minimum distance
between clip centers.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .clips import VideoSource
from .manifest import ClipManifestEntry

log = logging.getLogger(__name__)

_LENGTH_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([sf])\s*$")


class FrameEmbedder(Protocol):
    def __call__(self, frames: np.ndarray) -> np.ndarray:
        """``(N, H, W, 3)`` frames -> ``(N, D)`` unit-norm features."""


class PixelEmbedder:
    """Area-downsampled pixels, flattened and unit-normalized."""

    def __init__(self, grid: int = 8):
        self.grid = grid

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.ndim == 3:
            frames = frames[None]
        x = torch.from_numpy(frames.astype(np.float64)).permute(0, 3, 1, 2)
        x = F.adaptive_avg_pool2d(x, self.grid).reshape(x.shape[0], -1).numpy()
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.maximum(norms, 1e-12)


@dataclass(frozen=True)
class CurationConfig:
    length: str = "4s"
    min_similarity: float = 0.99
    min_stride_s: float = 0.0
    period: int = 30

    def __post_init__(self) -> None:
        if not _LENGTH_RE.match(self.length):
            raise ValueError(f"length must look like '4s' or '68f', got {self.length!r}")
        if not -1.0 <= self.min_similarity <= 1.01:
            raise ValueError("min_similarity must lie in [-1, 1] (1.01 allowed as an empty filter)")
        if self.min_stride_s < 0:
            raise ValueError("stride must be >= 0")
        if self.period < 1:
            raise ValueError("period must be >= 1")

    def clip_frames(self, fps: float) -> int:
        value, unit = _LENGTH_RE.match(self.length).groups()
        return int(round(float(value) * fps)) if unit == "s" else int(float(value))

    def stride_frames(self, fps: float) -> float:
        return self.min_stride_s * fps


@dataclass(frozen=True)
class LabeledImage:
    image: np.ndarray
    label: str
    ref: str = ""


@dataclass(frozen=True)
class Match:
    image_index: int
    source_index: int
    frame: int
    similarity: float


@dataclass
class CurationResult:
    matches: List[Match]
    entries: List[ClipManifestEntry]
    kept: List[int] = field(default_factory=list)


def _embed_sampled(source: VideoSource, embedder: FrameEmbedder, period: int) -> Tuple[np.ndarray, np.ndarray]:
    idx = np.arange(0, len(source), period)
    if idx.size == 0:
        return idx, np.zeros((0, 0))
    return idx, np.asarray(embedder(source.frames[idx]), dtype=np.float64)


def match_frames(
    images: Sequence[LabeledImage],
    sources: Sequence[VideoSource],
    embedder: FrameEmbedder,
    period: int = 30,
    workers: int = 1,
) -> List[Match]:
    """Best-matching sampled frame for every labeled image.

    Ties go to the earliest source, then the earliest frame.
    """
    if not images:
        return []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        embedded = list(pool.map(lambda s: _embed_sampled(s, embedder, period), sources))
    owners = [np.full(len(idx), si) for si, (idx, _) in enumerate(embedded)]
    frames = [idx for idx, _ in embedded]
    feats = [f for idx, f in embedded if len(idx)]
    if not feats:
        log.warning("no frames available for curation")
        return []
    bank = np.concatenate(feats, axis=0)
    owner = np.concatenate(owners)
    frame_idx = np.concatenate(frames)

    queries = np.asarray(embedder(np.stack([im.image for im in images])), dtype=np.float64)
    sims = queries @ bank.T
    best = sims.argmax(axis=1)  # first maximum wins
    return [
        Match(i, int(owner[b]), int(frame_idx[b]), float(np.clip(sims[i, b], -1.0, 1.0)))
        for i, b in enumerate(best)
    ]


def clip_around(frame: int, n_frames: int, source_length: int) -> Tuple[int, int]:
    """``(start, count)`` of a clip centered on ``frame``, clamped inside the source."""
    n = min(n_frames, source_length)
    start = frame - (n - 1) // 2
    start = min(max(start, 0), source_length - n)
    return start, n


def matches_to_entries(
    matches: Sequence[Match],
    images: Sequence[LabeledImage],
    sources: Sequence[VideoSource],
    cfg: CurationConfig,
    utterances: Optional[Sequence[Sequence[int]]] = None,
) -> List[ClipManifestEntry]:
    out = []
    for m in matches:
        src = sources[m.source_index]
        start, n = clip_around(m.frame, cfg.clip_frames(src.fps), len(src))
        out.append(
            ClipManifestEntry(
                source_path=src.path,
                start_frame=start,
                n_frames=n,
                fps=src.fps,
                label=images[m.image_index].label,
                utterance_ids=tuple(utterances[m.image_index]) if utterances is not None else (),
                similarity=m.similarity,
            )
        )
    return out


def filter_entries(
    entries: Sequence[ClipManifestEntry],
    min_similarity: float,
    min_stride_s: float,
    source_order: Optional[Sequence[str]] = None,
) -> List[int]:
    """Indices of entries that survive the similarity and stride filters.

    Entries are scanned by (similarity desc, source, start frame); one is kept
    unless a kept clip from the same source has its center closer than the
    stride. The returned indices are in that scan order.
    """
    rank = {p: i for i, p in enumerate(source_order)} if source_order is not None else None

    def key(i: int):
        e = entries[i]
        src = rank[e.source_path] if rank is not None else e.source_path
        return (-e.similarity, src, e.start_frame, i)

    order = sorted((i for i, e in enumerate(entries) if e.similarity >= min_similarity), key=key)
    kept: List[int] = []
    centers: dict[str, List[float]] = {}
    for i in order:
        e = entries[i]
        stride = min_stride_s * e.fps
        taken = centers.setdefault(e.source_path, [])
        if all(abs(e.center_frame - c) >= stride for c in taken):
            kept.append(i)
            taken.append(e.center_frame)
    return kept


def curate(
    images: Sequence[LabeledImage],
    sources: Sequence[VideoSource],
    embedder: FrameEmbedder,
    cfg: CurationConfig = CurationConfig(),
    utterances: Optional[Sequence[Sequence[int]]] = None,
    workers: int = 1,
) -> CurationResult:
    matches = match_frames(images, sources, embedder, cfg.period, workers)
    if not matches:
        log.warning("curation produced no matches")
        return CurationResult([], [], [])
    entries = matches_to_entries(matches, images, sources, cfg, utterances)
    kept = filter_entries(entries, cfg.min_similarity, cfg.min_stride_s, [s.path for s in sources])
    return CurationResult(matches, [entries[i] for i in kept], kept)


def curation_report(
    matches: Sequence[Match],
    images: Sequence[LabeledImage],
    sources: Sequence[VideoSource],
    settings: Iterable[Tuple[str, float, float]],
) -> List[Tuple[str, float, float, int]]:
    """Retained-clip counts for each ``(length, min_similarity, stride_s)``."""
    rows = []
    order = [s.path for s in sources]
    for length, sim, stride in settings:
        cfg = CurationConfig(length=length, min_similarity=sim, min_stride_s=stride)
        entries = matches_to_entries(matches, images, sources, cfg)
        rows.append((length, sim, stride, len(filter_entries(entries, sim, stride, order))))
    return rows
