"""Clip manifest records and their CSV form.

One record per line after a header::

    source_path,start_frame,n_frames,fps,label,utterance_ids,similarity

``utterance_ids`` is space separated; optional fields are left empty.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

FIELDS = ("source_path", "start_frame", "n_frames", "fps", "label", "utterance_ids", "similarity")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ClipManifestEntry:
    source_path: str
    start_frame: int
    n_frames: int
    fps: float
    label: Optional[str] = None
    utterance_ids: Tuple[int, ...] = field(default_factory=tuple)
    similarity: Optional[float] = None

    def __post_init__(self) -> None:
        if self.start_frame < 0 or self.n_frames <= 0:
            raise ManifestError(f"bad frame range {self.start_frame}+{self.n_frames}")
        if self.similarity is not None and not -1.0 - 1e-6 <= self.similarity <= 1.0 + 1e-6:
            raise ManifestError(f"similarity {self.similarity} outside [-1, 1]")

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.n_frames

    @property
    def center_frame(self) -> float:
        return self.start_frame + (self.n_frames - 1) / 2

    def to_row(self) -> List[str]:
        return [
            self.source_path,
            str(self.start_frame),
            str(self.n_frames),
            f"{self.fps:g}",
            self.label or "",
            " ".join(str(i) for i in self.utterance_ids),
            "" if self.similarity is None else repr(float(self.similarity)),
        ]

    @classmethod
    def from_row(cls, row: dict, line: int = 0) -> "ClipManifestEntry":
        try:
            return cls(
                source_path=row["source_path"],
                start_frame=int(row["start_frame"]),
                n_frames=int(row["n_frames"]),
                fps=float(row["fps"]),
                label=row["label"] or None,
                utterance_ids=tuple(int(t) for t in row["utterance_ids"].split()),
                similarity=float(row["similarity"]) if row["similarity"] else None,
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ManifestError(f"manifest line {line}: {exc}") from exc


def format_manifest(entries: Iterable[ClipManifestEntry]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for e in entries:
        writer.writerow(e.to_row())
    return buf.getvalue()


def write_manifest(path: str | Path, entries: Iterable[ClipManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(entries), encoding="utf-8")
    return path


def parse_manifest(text: str) -> List[ClipManifestEntry]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != FIELDS:
        raise ManifestError(f"manifest header must be {','.join(FIELDS)}")
    return [ClipManifestEntry.from_row(row, line=i + 2) for i, row in enumerate(reader)]


def read_manifest(path: str | Path) -> List[ClipManifestEntry]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))
