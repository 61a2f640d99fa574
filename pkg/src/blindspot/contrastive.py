"""Word-embedding text encoder, video projection head and symmetric InfoNCE training.

The video encoder is frozen. Because the projection acts on mean-pooled
latents and the encoder runs in eval mode, pooled features are computed once
per clip and cached for the whole run.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .mae import InputError, VideoMAE

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"


class Vocabulary:
    """Dense word ids; ``<pad>`` is 0 and ``<unk>`` is 1."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos: List[str] = [PAD, UNK]
        self.stoi: Dict[str, int] = {PAD: 0, UNK: 1}
        for w in words:
            self.add(w)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def reserved(self) -> Tuple[int, int]:
        return (0, 1)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def encode(self, text: str | Sequence[str]) -> List[int]:
        words = text.split() if isinstance(text, str) else text
        return [self.stoi.get(w, self.unk_id) for w in words]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.itos) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD, UNK]:
            raise InputError(f"{path}: vocabulary must start with {PAD} and {UNK}")
        vocab = cls()
        for w in lines[2:]:
            if w in vocab:
                raise InputError(f"{path}: duplicate token {w!r}")
            vocab.add(w)
        return vocab


@dataclass(frozen=True)
class UtteranceRecord:
    token_ids: Tuple[int, ...]
    clip_ref: str = ""

    def __post_init__(self) -> None:
        if len(self.token_ids) < 1:
            raise InputError("utterance must contain at least one token")


def embed_utterance(utt: UtteranceRecord | Sequence[int], table: torch.Tensor | np.ndarray, reserved=(0, 1)):
    """Mean of the embedding rows of the non-reserved tokens."""
    ids = utt.token_ids if isinstance(utt, UtteranceRecord) else tuple(utt)
    keep = [i for i in ids if i not in reserved]
    if not keep:
        raise InputError("utterance is empty after removing reserved ids")
    if isinstance(table, np.ndarray):
        return table[keep].mean(axis=0)
    return table[torch.tensor(keep)].mean(dim=0)


def pad_batch(utterances: Sequence[Sequence[int]], pad_id: int = 0) -> torch.Tensor:
    longest = max(len(u) for u in utterances)
    out = torch.full((len(utterances), longest), pad_id, dtype=torch.long)
    for i, u in enumerate(utterances):
        out[i, : len(u)] = torch.tensor(list(u), dtype=torch.long)
    return out


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, dim: int = 512, init_range: float = 0.1, reserved=(0, 1)):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, dim)
        nn.init.uniform_(self.embedding.weight, -init_range, init_range)
        self.reserved = tuple(reserved)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """``(B, L)`` padded ids -> ``(B, d)`` mean word embedding."""
        keep = torch.ones_like(ids, dtype=torch.bool)
        for r in self.reserved:
            keep &= ids != r
        counts = keep.sum(dim=1, keepdim=True)
        if bool((counts == 0).any()):
            raise InputError("utterance is empty after removing reserved ids")
        emb = self.embedding(ids) * keep.unsqueeze(-1).to(self.embedding.weight.dtype)
        return emb.sum(dim=1) / counts


class VideoProjection(nn.Module):
    """Mean-pool encoder latents, then a linear map to ``d`` dims."""

    def __init__(self, embed_dim: int, dim: int = 512, identity_init: bool = False):
        super().__init__()
        self.linear = nn.Linear(embed_dim, dim)
        if identity_init:
            if dim != embed_dim:
                raise ValueError("identity init needs dim == embed_dim")
            nn.init.eye_(self.linear.weight)
            nn.init.zeros_(self.linear.bias)

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        pooled = latents.mean(dim=-2) if latents.dim() == 3 else latents
        return self.linear(pooled)


def project_video(latents: torch.Tensor, projection: VideoProjection) -> torch.Tensor:
    return F.normalize(projection(latents), dim=-1)


# ---------------------------------------------------------------------------
# losses


def info_nce(u: torch.Tensor, v: torch.Tensor, tau: float = 0.07) -> torch.Tensor:
    """``-(1/B) sum_i log softmax_j(u_i . v_j / tau)[i]``, via log-sum-exp."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if u.shape != v.shape or u.dim() != 2 or u.shape[0] < 2:
        raise InputError(f"need matching (B>=2, d) batches, got {tuple(u.shape)} and {tuple(v.shape)}")
    logits = (u @ v.T) / tau
    return -(logits.diagonal() - torch.logsumexp(logits, dim=1)).mean()


def symmetric_loss(u: torch.Tensor, v: torch.Tensor, tau: float = 0.07) -> torch.Tensor:
    return info_nce(u, v, tau) + info_nce(v, u, tau)


def info_nce_numpy(u: np.ndarray, v: np.ndarray, tau: float = 0.07) -> float:
    logits = (u @ v.T) / tau
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    return float(-(np.diag(logits) - lse).mean())


def symmetric_loss_numpy(u: np.ndarray, v: np.ndarray, tau: float = 0.07) -> float:
    return info_nce_numpy(u, v, tau) + info_nce_numpy(v, u, tau)


def symmetric_loss_grad(u: np.ndarray, v: np.ndarray, tau: float = 0.07) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form gradients of :func:`symmetric_loss_numpy` with respect to ``u`` and ``v``.

    With ``S = u v^T / tau``, the row term contributes ``(softmax_rows(S) - I) / B``
    and the column term ``(softmax_cols(S) - I) / B`` to ``dL/dS``.
    """
    b = u.shape[0]
    s = (u @ v.T) / tau
    p_rows = np.exp(s - s.max(axis=1, keepdims=True))
    p_rows /= p_rows.sum(axis=1, keepdims=True)
    p_cols = np.exp(s - s.max(axis=0, keepdims=True))
    p_cols /= p_cols.sum(axis=0, keepdims=True)
    g = (p_rows + p_cols - 2 * np.eye(b)) / b
    return g @ v / tau, g.T @ u / tau


# ---------------------------------------------------------------------------
# multimodal model and training


class MultimodalModel(nn.Module):
    def __init__(self, encoder: VideoMAE, vocab_size: int, dim: int = 512, normalize: bool = True):
        super().__init__()
        self.encoder = encoder
        self.encoder.requires_grad_(False)
        self.encoder.eval()
        self.projection = VideoProjection(encoder.config.embed_dim, dim)
        self.text = TextEncoder(vocab_size, dim)
        self.normalize = normalize

    def train(self, mode: bool = True):
        super().train(mode)
        self.encoder.eval()
        return self

    @torch.no_grad()
    def pooled_features(self, clips: torch.Tensor, batch_size: int = 16) -> torch.Tensor:
        out = [self.encoder.features(clips[i : i + batch_size]) for i in range(0, len(clips), batch_size)]
        return torch.cat(out) if out else torch.zeros(0, self.encoder.config.embed_dim)

    def embed_pooled(self, pooled: torch.Tensor) -> torch.Tensor:
        u = self.projection(pooled)
        return F.normalize(u, dim=-1) if self.normalize else u

    def embed_video(self, clips: torch.Tensor) -> torch.Tensor:
        return self.embed_pooled(self.pooled_features(clips))

    def embed_text(self, ids: torch.Tensor) -> torch.Tensor:
        v = self.text(ids)
        return F.normalize(v, dim=-1) if self.normalize else v


@dataclass
class MultimodalConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.1
    tau: float = 0.07
    dim: int = 512
    normalize: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("contrastive batches need at least two pairs")


@dataclass
class MultimodalResult:
    model: MultimodalModel
    losses: List[Tuple[int, float]]
    manifest: Dict
    checkpoint_path: Optional[Path] = None


def train_multimodal(
    clips: Sequence[np.ndarray] | torch.Tensor,
    utterances: Sequence[Sequence[int]],
    encoder: VideoMAE,
    vocab: Vocabulary,
    config: MultimodalConfig = MultimodalConfig(),
    checkpoint_path: Optional[str | Path] = None,
    encoder_ref: str = "",
) -> MultimodalResult:
    """Train the text embedding table and video projection against a frozen encoder."""
    if len(clips) != len(utterances):
        raise InputError(f"{len(clips)} clips but {len(utterances)} utterances")
    if len(clips) < 2:
        raise InputError("need at least two pairs")
    for u in utterances:
        if any(i < 0 or i >= len(vocab) for i in u):
            raise InputError(f"utterance {list(u)} has ids outside the vocabulary of size {len(vocab)}")

    torch.manual_seed(config.seed)
    model = MultimodalModel(encoder, len(vocab), config.dim, config.normalize)
    x = clips if isinstance(clips, torch.Tensor) else torch.from_numpy(np.stack(clips).astype(np.float32))
    pooled = model.pooled_features(x)
    ids = pad_batch(utterances, vocab.pad_id)

    params = list(model.projection.parameters()) + list(model.text.parameters())
    opt = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed)
    n = len(utterances)
    bs = min(config.batch_size, n)
    order: List[int] = []
    losses: List[Tuple[int, float]] = []
    model.train()
    for step in range(config.steps):
        idx = []
        while len(idx) < bs:
            if not order:
                order = torch.randperm(n, generator=gen).tolist()
            idx.append(order.pop())
        idx_t = torch.tensor(idx)
        u = model.embed_pooled(pooled[idx_t])
        v = model.embed_text(ids[idx_t])
        loss = symmetric_loss(u, v, config.tau)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite contrastive loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append((step, float(loss.item())))
        if step % 200 == 0:
            log.info("multimodal step %d loss %.4f", step, losses[-1][1])
    model.eval()

    manifest = {
        "kind": "multimodal",
        "config": asdict(config),
        "vocab_size": len(vocab),
        "encoder": encoder_ref,
        "encoder_model": asdict(encoder.config),
        "n_tokens": encoder.n_tokens,
        "step": config.steps,
        "seed": config.seed,
    }
    path = None
    if checkpoint_path is not None:
        path = save_multimodal(checkpoint_path, model, manifest)
    return MultimodalResult(model, losses, manifest, path)


def save_multimodal(path: str | Path, model: MultimodalModel, manifest: Dict) -> Path:
    arrays = ckpt.state_to_arrays(model.encoder, "mae.")
    arrays.update(ckpt.state_to_arrays(model.projection, "projection."))
    arrays.update(ckpt.state_to_arrays(model.text, "text."))
    return ckpt.save_checkpoint(path, arrays, manifest)


def load_multimodal(path: str | Path) -> Tuple[MultimodalModel, Dict]:
    from .mae import EncoderConfig

    arrays, manifest = ckpt.load_checkpoint(path)
    if manifest.get("kind") != "multimodal":
        raise InputError(f"{path} is not a multimodal checkpoint")
    encoder = VideoMAE(EncoderConfig(**manifest["encoder_model"]), n_tokens=manifest["n_tokens"])
    encoder.load_state_dict(ckpt.arrays_to_state(arrays, "mae."))
    cfg = manifest["config"]
    model = MultimodalModel(encoder, manifest["vocab_size"], cfg["dim"], cfg["normalize"])
    model.projection.load_state_dict(ckpt.arrays_to_state(arrays, "projection."))
    model.text.load_state_dict(ckpt.arrays_to_state(arrays, "text."))
    model.eval()
    return model, manifest


def in_batch_retrieval_accuracy(u: torch.Tensor, v: torch.Tensor, labels: Sequence) -> float:
    """Fraction of videos whose most similar text carries the same label."""
    best = (u @ v.T).argmax(dim=1).tolist()
    return float(np.mean([labels[i] == labels[j] for i, j in enumerate(best)]))
