"""Frozen-feature extraction and linear probing (top-1 / top-5)."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..data.augment import Mode, augment
from ..mae import VideoMAE

log = logging.getLogger(__name__)

IMAGE_SPLIT = (0.45, 0.05, 0.50)
VIDEO_SPLIT = (0.80, 0.10, 0.10)


@dataclass(frozen=True)
class ProbeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        parts = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ValueError("split parts overlap")


def make_split(n: int, ratios: Tuple[float, float, float] = VIDEO_SPLIT, seed: int = 0) -> ProbeSplit:
    """Seeded random train/val/test partition of ``range(n)``."""
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return ProbeSplit(perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])


@torch.no_grad()
def extract_features(
    encoder: VideoMAE,
    clips: Sequence[np.ndarray],
    mode: Mode | str = Mode.EVAL,
    size: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = 16,
    preprocess: bool = True,
) -> np.ndarray:
    """Pooled frozen-encoder features, one row per raw ``(3, T, H, W)`` clip."""
    encoder.eval()
    size = size or clips[0].shape[-1]
    rows = []
    for i in range(0, len(clips), batch_size):
        batch = [augment(c, mode, rng, size=size) if preprocess else c for c in clips[i : i + batch_size]]
        rows.append(encoder.features(torch.from_numpy(np.stack(batch))).numpy())
    return np.concatenate(rows) if rows else np.zeros((0, encoder.config.embed_dim), np.float32)


def topk_correct(logits: np.ndarray, targets: np.ndarray, k: int) -> np.ndarray:
    k = min(k, logits.shape[1])
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return (top == targets[:, None]).any(axis=1)


@dataclass
class ProbeResult:
    acc1: float
    acc5: float
    best_epoch: int
    val_acc1: float
    classes: List[Hashable]
    per_class: Dict[Hashable, Tuple[int, int]] = field(default_factory=dict)
    test_correct: Optional[np.ndarray] = None


def linear_probe(
    features: np.ndarray,
    labels: Sequence[Hashable],
    split: ProbeSplit,
    epochs: int = 300,
    lr: float = 0.01,
    weight_decay: float = 1e-4,
    seed: int = 0,
) -> ProbeResult:
    """Multinomial logistic regression on frozen features.

    Trained full-batch with Adam on the train split; the epoch with the best
    validation top-1 (earliest on ties) is evaluated on the test split.
    """
    classes = sorted(set(labels), key=str)
    if len(classes) < 2:
        raise ValueError("a probe needs at least two classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[l] for l in labels])
    x = np.asarray(features, dtype=np.float32)
    missing = set(range(len(classes))) - set(y[split.train].tolist())
    if missing:
        warnings.warn(f"classes absent from train split: {[classes[i] for i in sorted(missing)]}", stacklevel=2)

    mu = x[split.train].mean(axis=0)
    sd = x[split.train].std(axis=0) + 1e-6
    xs = torch.from_numpy((x - mu) / sd)
    yt = torch.from_numpy(y)
    tr = torch.from_numpy(split.train)
    va = torch.from_numpy(split.val) if len(split.val) else tr

    torch.manual_seed(seed)
    layer = torch.nn.Linear(x.shape[1], len(classes))
    torch.nn.init.zeros_(layer.weight)
    torch.nn.init.zeros_(layer.bias)
    opt = torch.optim.Adam(layer.parameters(), lr=lr, weight_decay=weight_decay)

    best = (-1.0, 0, {k: v.clone() for k, v in layer.state_dict().items()})
    for epoch in range(1, epochs + 1):
        loss = F.cross_entropy(layer(xs[tr]), yt[tr])
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            val_acc = float((layer(xs[va]).argmax(1) == yt[va]).float().mean())
        if val_acc > best[0]:
            best = (val_acc, epoch, {k: v.clone() for k, v in layer.state_dict().items()})

    layer.load_state_dict(best[2])
    with torch.no_grad():
        logits = layer(xs[torch.from_numpy(split.test)]).numpy()
    yt_test = y[split.test]
    c1 = topk_correct(logits, yt_test, 1)
    c5 = topk_correct(logits, yt_test, 5)
    per_class = {}
    for ci, c in enumerate(classes):
        sel = yt_test == ci
        per_class[c] = (int(c1[sel].sum()), int(sel.sum()))
    n = max(len(yt_test), 1)
    return ProbeResult(
        acc1=float(c1.sum()) / n,
        acc5=float(c5.sum()) / n,
        best_epoch=best[1],
        val_acc1=best[0],
        classes=classes,
        per_class=per_class,
        test_correct=c1,
    )
