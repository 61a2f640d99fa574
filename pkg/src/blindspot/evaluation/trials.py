"""Four-way forced-choice trials and the scorers that drive them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from ..contrastive import MultimodalModel, Vocabulary, pad_batch
from ..data.augment import Mode, augment
from ..data.clips import stack_image

Scorer = Callable[[str, str], float]
"""``(label, exemplar_ref) -> score``."""

N_FOILS = 3


class TrialError(ValueError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    target_label: str
    target_ref: str
    foil_refs: Tuple[str, str, str]

    def __post_init__(self) -> None:
        if len(self.foil_refs) != N_FOILS:
            raise TrialError(f"trial needs exactly {N_FOILS} foils, got {len(self.foil_refs)}")

    @property
    def candidates(self) -> Tuple[str, ...]:
        return (self.target_ref,) + tuple(self.foil_refs)

    def validate(self, label_of: Mapping[str, str]) -> None:
        try:
            foil_labels = [label_of[r] for r in self.foil_refs]
            target = label_of[self.target_ref]
        except KeyError as exc:
            raise TrialError(f"unknown exemplar {exc}") from exc
        if target != self.target_label:
            raise TrialError(f"target {self.target_ref} is labeled {target!r}, not {self.target_label!r}")
        if self.target_label in foil_labels:
            raise TrialError(f"foil shares the target label {self.target_label!r}")
        if len(set(foil_labels)) != N_FOILS:
            raise TrialError("foil labels must be distinct")


def make_trials(
    label_of: Mapping[str, str],
    n_trials: int,
    seed: int = 0,
) -> List[TrialRecord]:
    """Random trials: uniform target class, foil classes drawn without replacement."""
    by_label: Dict[str, List[str]] = {}
    for ref in sorted(label_of):
        by_label.setdefault(label_of[ref], []).append(ref)
    labels = sorted(by_label)
    if len(labels) < N_FOILS + 1:
        raise TrialError(f"need at least {N_FOILS + 1} classes, got {len(labels)}")
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_trials):
        t = labels[int(rng.integers(len(labels)))]
        others = [l for l in labels if l != t]
        foils = [others[i] for i in rng.choice(len(others), size=N_FOILS, replace=False)]
        target_ref = by_label[t][int(rng.integers(len(by_label[t])))]
        foil_refs = tuple(by_label[f][int(rng.integers(len(by_label[f])))] for f in foils)
        trials.append(TrialRecord(t, target_ref, foil_refs))
    return trials


def format_trials(trials: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for t in trials:
        w.writerow([t.target_label, t.target_ref, *t.foil_refs])
    return buf.getvalue()


def write_trials(path: str | Path, trials: Sequence[TrialRecord]) -> Path:
    path = Path(path)
    path.write_text(format_trials(trials), encoding="utf-8")
    return path


def parse_trials(text: str, label_of: Optional[Mapping[str, str]] = None) -> List[TrialRecord]:
    """One trial per line: ``target_label,target_ref,foil_ref1,foil_ref2,foil_ref3``."""
    trials = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        if len(row) != 2 + N_FOILS or any(not f.strip() for f in row):
            raise TrialError(f"line {lineno}: expected {2 + N_FOILS} non-empty fields, got {row!r}")
        trial = TrialRecord(row[0], row[1], tuple(row[2:]))
        if label_of is not None:
            try:
                trial.validate(label_of)
            except TrialError as exc:
                raise TrialError(f"line {lineno}: {exc}") from exc
        trials.append(trial)
    return trials


def read_trials(path: str | Path, label_of: Optional[Mapping[str, str]] = None) -> List[TrialRecord]:
    return parse_trials(Path(path).read_text(encoding="utf-8"), label_of)


def trial_outcomes(scorer: Scorer, trials: Sequence[TrialRecord]) -> List[bool]:
    """Per-trial correctness; the target must beat every foil strictly."""
    out = []
    for t in trials:
        target = scorer(t.target_label, t.target_ref)
        out.append(all(target > scorer(t.target_label, f) for f in t.foil_refs))
    return out


def nway_trial_eval(scorer: Scorer, trials: Sequence[TrialRecord]) -> float:
    if not trials:
        return 0.0
    return float(np.mean(trial_outcomes(scorer, trials)))


def frames_for_encoder(model: MultimodalModel, height: int, width: int) -> int:
    """Clip length that gives the encoder its expected token count at ``height x width``."""
    c = model.encoder.config
    per_slot = (height // c.patch_size) * (width // c.patch_size)
    return model.encoder.n_tokens // per_slot * c.tubelet


def multimodal_scorer(
    model: MultimodalModel,
    vocab: Vocabulary,
    exemplars: Mapping[str, np.ndarray],
    preprocess: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    batch_size: int = 16,
) -> Scorer:
    """Cosine similarity between a label word and an exemplar.

    Exemplars are ``(H, W, 3)`` images, stacked into static clips, or raw
    ``(3, T, H, W)`` clips. ``preprocess`` defaults to evaluation-mode
    normalization. Embeddings are computed once up front.
    """
    model.eval()
    prep = preprocess or (lambda c: augment(c, Mode.EVAL, size=c.shape[-1]))
    refs = sorted(exemplars)
    clips = []
    for r in refs:
        x = np.asarray(exemplars[r])
        if x.ndim == 3:
            x = stack_image(x, frames_for_encoder(model, x.shape[0], x.shape[1]))
        clips.append(prep(x.astype(np.float32)))
    with torch.no_grad():
        u = model.projection(model.pooled_features(torch.from_numpy(np.stack(clips)), batch_size))
        u = torch.nn.functional.normalize(u, dim=-1).numpy()
    video = dict(zip(refs, u))
    text_cache: Dict[str, np.ndarray] = {}

    def text_vec(label: str) -> np.ndarray:
        if label not in text_cache:
            with torch.no_grad():
                v = model.text(pad_batch([vocab.encode([label])]))
            text_cache[label] = torch.nn.functional.normalize(v, dim=-1).numpy()[0]
        return text_cache[label]

    def score(label: str, ref: str) -> float:
        return float(text_vec(label) @ video[ref])

    return score


def image_model_adapter(image_scorer: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Lift a per-image logit function to clips by averaging logits over frames.

    ``image_scorer`` maps a ``(3, H, W)`` frame to a logit vector; the adapted
    function maps a ``(3, T, H, W)`` clip to the frame-mean logit vector.
    """

    def clip_scorer(clip: np.ndarray) -> np.ndarray:
        logits = [np.asarray(image_scorer(clip[:, t]), dtype=np.float64) for t in range(clip.shape[1])]
        return np.mean(logits, axis=0)

    return clip_scorer
