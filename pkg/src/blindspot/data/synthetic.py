"""Procedurally rendered toy corpus with known labels.

Each clip shows one colored shape moving over a smooth background. The shape
is the concept (named by a one-word utterance); the motion is a Toybox-style
transformation label. Everything is a pure function of the ``SyntheticSpec`` and its seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..contrastive import Vocabulary
from .clips import VideoSource, load_source, save_source
from .curation import LabeledImage
from .manifest import ClipManifestEntry, read_manifest, write_manifest

# (word, shape, rgb)
CONCEPTS: Tuple[Tuple[str, str, Tuple[float, float, float]], ...] = (
    ("ball", "circle", (0.90, 0.15, 0.15)),
    ("block", "square", (0.15, 0.75, 0.20)),
    ("kite", "diamond", (0.20, 0.30, 0.95)),
    ("cone", "triangle", (0.95, 0.85, 0.10)),
    ("plane", "cross", (0.85, 0.20, 0.85)),
    ("hoop", "ring", (0.10, 0.85, 0.85)),
    ("stick", "bar", (0.98, 0.55, 0.10)),
    ("cup", "halfdisc", (0.97, 0.97, 0.97)),
    ("duck", "ellipse", (0.55, 0.35, 0.15)),
    ("car", "wide", (0.35, 0.35, 0.35)),
    ("shoe", "notch", (0.50, 0.95, 0.50)),
    ("fish", "wedge", (0.55, 0.55, 0.95)),
)

TRANSFORMS = ("present", "translate_x", "translate_y", "translate_z", "rotate_x", "rotate_y", "rotate_z")


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r2 = u * u + v * v
    au, av = np.abs(u), np.abs(v)
    if shape == "circle":
        return r2 <= 1.0
    if shape == "square":
        return np.maximum(au, av) <= 0.8
    if shape == "diamond":
        return au + av <= 1.0
    if shape == "triangle":
        return (v <= 0.7) & (au <= (v + 0.9) * 0.55)
    if shape == "cross":
        return ((au <= 0.3) & (av <= 0.95)) | ((av <= 0.3) & (au <= 0.95))
    if shape == "ring":
        return (r2 <= 1.0) & (r2 >= 0.36)
    if shape == "bar":
        return (au <= 1.0) & (av <= 0.3)
    if shape == "halfdisc":
        return (r2 <= 1.0) & (v >= -0.1)
    if shape == "ellipse":
        return (u / 1.0) ** 2 + (v / 0.55) ** 2 <= 1.0
    if shape == "wide":
        return (au <= 1.0) & (av <= 0.55)
    if shape == "notch":
        return (np.maximum(au, av) <= 0.85) & ~((u > 0) & (v < 0))
    if shape == "wedge":
        return (u >= -0.9) & (av <= (u + 0.9) * 0.5) & (u <= 0.9)
    raise ValueError(f"unknown shape {shape!r}")


def render_clip(
    shape: str,
    color: Sequence[float],
    transform: str,
    n_frames: int,
    height: int,
    width: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``(T, H, W, 3)`` uint8 frames of one shape undergoing one transformation."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    side = min(height, width)
    radius = rng.uniform(0.16, 0.24) * side
    cx0 = rng.uniform(0.35, 0.65) * width
    cy0 = rng.uniform(0.35, 0.65) * height
    angle0 = rng.uniform(-0.3, 0.3)
    direction = rng.choice([-1.0, 1.0])

    base = rng.uniform(0.25, 0.5)
    theta = rng.uniform(0, 2 * math.pi)
    ramp = ((xx / width - 0.5) * math.cos(theta) + (yy / height - 0.5) * math.sin(theta)) * 0.3
    background = np.clip(base + ramp, 0, 1)
    tint = rng.uniform(0.9, 1.1, size=3)
    color = np.clip(np.asarray(color) * rng.uniform(0.9, 1.05), 0, 1)

    frames = np.empty((n_frames, height, width, 3), dtype=np.uint8)
    for t in range(n_frames):
        s = t / max(n_frames - 1, 1)
        cx, cy, r, ang, ax, ay = cx0, cy0, radius, angle0, 1.0, 1.0
        if transform == "translate_x":
            cx = cx0 + direction * (s - 0.5) * 0.3 * width
        elif transform == "translate_y":
            cy = cy0 + direction * (s - 0.5) * 0.3 * height
        elif transform == "translate_z":
            r = radius * (1.0 + direction * (s - 0.5) * 0.6)
        elif transform == "rotate_z":
            ang = angle0 + direction * s * math.pi / 2
        elif transform == "rotate_x":
            ay = 0.35 + 0.65 * abs(math.cos(math.pi * s))
        elif transform == "rotate_y":
            ax = 0.35 + 0.65 * abs(math.cos(math.pi * s))
        elif transform != "present":
            raise ValueError(f"unknown transform {transform!r}")
        dx, dy = xx - cx, yy - cy
        u = (dx * math.cos(ang) + dy * math.sin(ang)) / (r * ax)
        v = (-dx * math.sin(ang) + dy * math.cos(ang)) / (r * ay)
        inside = _shape_mask(shape, u, v)
        # slow global drift keeps every frame distinct
        bg = np.clip(background * (1.0 + 0.02 * math.sin(0.37 * t + theta)), 0, 1)
        img = bg[..., None] * tint
        img[inside] = color
        frames[t] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return frames


@dataclass(frozen=True)
class SyntheticSpec:
    n_concepts: int = 8
    clips_per_concept: int = 40
    n_frames: int = 16
    height: int = 112
    width: int = 112
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 2 <= self.n_concepts <= len(CONCEPTS):
            raise ValueError(f"n_concepts must lie in [2, {len(CONCEPTS)}]")
        if self.clips_per_concept < 1 or self.n_frames < 1:
            raise ValueError("need at least one clip and one frame")


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    sources: List[VideoSource]
    labels: List[str]
    transforms: List[str]
    utterances: List[List[int]]
    vocab: Vocabulary
    manifest: List[ClipManifestEntry]

    @property
    def words(self) -> List[str]:
        return [w for w, _, _ in CONCEPTS[: self.spec.n_concepts]]

    def middle_frames(self) -> np.ndarray:
        return np.stack([s.frames[len(s) // 2] for s in self.sources])


def generate_synthetic_corpus(spec: SyntheticSpec = SyntheticSpec(), root: str = "synthetic") -> SyntheticCorpus:
    concepts = CONCEPTS[: spec.n_concepts]
    vocab = Vocabulary(w for w, _, _ in concepts)
    sources, labels, transforms, utterances, manifest = [], [], [], [], []
    for ci, (word, shape, color) in enumerate(concepts):
        for j in range(spec.clips_per_concept):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, ci, j]))
            transform = TRANSFORMS[int(rng.integers(len(TRANSFORMS)))]
            frames = render_clip(shape, color, transform, spec.n_frames, spec.height, spec.width, rng)
            path = f"{root}/{word}_{j:04d}.npz"
            src = VideoSource(path, frames, spec.fps)
            ids = vocab.encode([word])
            sources.append(src)
            labels.append(word)
            transforms.append(transform)
            utterances.append(ids)
            manifest.append(ClipManifestEntry(path, 0, spec.n_frames, spec.fps, word, tuple(ids)))
    return SyntheticCorpus(spec, sources, labels, transforms, utterances, vocab, manifest)


def save_corpus(corpus: SyntheticCorpus, directory: str | Path) -> Path:
    """Write sources, ``manifest.csv``, ``transforms.csv``, ``vocab.txt`` and ``spec.csv``.

    Source paths in the manifest are relative to ``directory``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for src in corpus.sources:
        save_source(src, directory / src.path)
    write_manifest(directory / "manifest.csv", corpus.manifest)
    with open(directory / "transforms.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_path", "label", "transform"])
        for src, label, tr in zip(corpus.sources, corpus.labels, corpus.transforms):
            w.writerow([src.path, label, tr])
    with open(directory / "spec.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for k, v in asdict(corpus.spec).items():
            w.writerow([k, v])
    corpus.vocab.save(directory / "vocab.txt")
    return directory


def load_corpus(directory: str | Path) -> SyntheticCorpus:
    directory = Path(directory)
    if not (directory / "manifest.csv").exists():
        raise FileNotFoundError(f"no corpus at {directory}")
    with open(directory / "spec.csv", newline="", encoding="utf-8") as fh:
        raw = dict(csv.reader(fh))
    spec = SyntheticSpec(
        n_concepts=int(raw["n_concepts"]),
        clips_per_concept=int(raw["clips_per_concept"]),
        n_frames=int(raw["n_frames"]),
        height=int(raw["height"]),
        width=int(raw["width"]),
        fps=float(raw["fps"]),
        seed=int(raw["seed"]),
    )
    manifest = read_manifest(directory / "manifest.csv")
    with open(directory / "transforms.csv", newline="", encoding="utf-8") as fh:
        transforms = [row["transform"] for row in csv.DictReader(fh)]
    sources = []
    for e in manifest:
        src = load_source(directory / e.source_path)
        sources.append(VideoSource(e.source_path, src.frames, src.fps))
    return SyntheticCorpus(
        spec,
        sources,
        [e.label for e in manifest],
        transforms,
        [list(e.utterance_ids) for e in manifest],
        Vocabulary.load(directory / "vocab.txt"),
        manifest,
    )


@dataclass
class PlantedCorpus:
    sources: List[VideoSource]
    images: List[LabeledImage]
    # (source_index, frame) of each planted image; None for perturbed decoys
    truth: List[Optional[Tuple[int, int]]]


def make_planted_corpus(
    n_sources: int = 6,
    segments_per_source: int = 5,
    segment_frames: int = 60,
    n_planted: int = 20,
    n_decoys: int = 20,
    period: int = 30,
    size: int = 32,
    fps: float = 30.0,
    seed: int = 0,
    decoy_noise: float = 0.08,
) -> PlantedCorpus:
    """Long multi-concept sources plus labeled images for curation checks.

    Planted images are exact copies of frames on the sampling lattice (their
    best match must be themselves, similarity 1). Decoys are noisy copies of
    off-lattice frames and match with similarity below 1.
    """
    rng = np.random.default_rng(seed)
    sources, seg_labels = [], []
    for si in range(n_sources):
        parts, labels = [], []
        for k in range(segments_per_source):
            ci = int(rng.integers(len(CONCEPTS[:8])))
            word, shape, color = CONCEPTS[ci]
            tr = TRANSFORMS[1 + int(rng.integers(len(TRANSFORMS) - 1))]
            parts.append(render_clip(shape, color, tr, segment_frames, size, size, rng))
            labels.append(word)
        sources.append(VideoSource(f"planted/source_{si:02d}.npz", np.concatenate(parts), fps))
        seg_labels.append(labels)

    lattice = [(si, f) for si, s in enumerate(sources) for f in range(0, len(s), period)]
    picks = rng.choice(len(lattice), size=min(n_planted, len(lattice)), replace=False)
    images, truth = [], []
    for p in sorted(int(x) for x in picks):
        si, f = lattice[p]
        label = seg_labels[si][f // segment_frames]
        images.append(LabeledImage(sources[si].frames[f].copy(), label, f"planted:{si}:{f}"))
        truth.append((si, f))
    for _ in range(n_decoys):
        si = int(rng.integers(n_sources))
        f = int(rng.integers(len(sources[si])))
        img = sources[si].frames[f].astype(np.float64) / 255 + rng.normal(0, decoy_noise, (size, size, 3))
        img = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        images.append(LabeledImage(img, seg_labels[si][f // segment_frames], f"decoy:{si}:{f}"))
        truth.append(None)
    return PlantedCorpus(sources, images, truth)
