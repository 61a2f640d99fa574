"""CSV tables and per-class bar charts for probe and trial results."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

Outcomes = Sequence[Tuple[str, bool]]
"""``(label, correct)`` per evaluated item."""


def config_hash(config: Mapping[str, Any], length: int = 12) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:length]


def run_dir(root: str | Path, config: Mapping[str, Any]) -> Path:
    """``root/<config hash>``; identical configs share a directory, different ones never collide."""
    return Path(root) / config_hash(config)


def per_class_table(results: Mapping[str, Outcomes]) -> List[Tuple[str, str, int, int, float]]:
    rows = []
    for model in sorted(results):
        counts: Dict[str, List[int]] = {}
        for label, ok in results[model]:
            c = counts.setdefault(label, [0, 0])
            c[0] += int(ok)
            c[1] += 1
        for label in sorted(counts):
            correct, n = counts[label]
            rows.append((model, label, n, correct, correct / n))
    return rows


def summary_table(results: Mapping[str, Outcomes]) -> List[Tuple[str, int, int, float]]:
    rows = []
    for model in sorted(results):
        outcomes = list(results[model])
        n = len(outcomes)
        correct = sum(int(ok) for _, ok in outcomes)
        rows.append((model, n, correct, correct / n if n else 0.0))
    return rows


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def plot_per_class(rows: Sequence[Tuple[str, str, int, int, float]], path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    models = sorted({r[0] for r in rows})
    labels = sorted({r[1] for r in rows})
    acc = {(r[0], r[1]): r[4] for r in rows}
    width = 0.8 / len(models)
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(labels)), 4))
    for i, m in enumerate(models):
        ax.bar(x + i * width, [100 * acc.get((m, l), 0.0) for l in labels], width, label=m)
    ax.set_xticks(x + width * (len(models) - 1) / 2)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def emit_report(results: Mapping[str, Outcomes], out_dir: str | Path, name: str = "report") -> Dict[str, Path]:
    """Write ``<name>_summary.csv``, ``<name>_per_class.csv`` and, if non-empty, ``<name>_per_class.png``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class = per_class_table(results)
    paths = {
        "summary": out_dir / f"{name}_summary.csv",
        "per_class": out_dir / f"{name}_per_class.csv",
    }
    paths["summary"].write_text(_csv(("model", "n", "correct", "accuracy"), summary_table(results)), encoding="utf-8")
    paths["per_class"].write_text(
        _csv(("model", "label", "n", "correct", "accuracy"), per_class), encoding="utf-8"
    )
    if per_class:
        paths["plot"] = plot_per_class(per_class, out_dir / f"{name}_per_class.png")
    return paths


def read_per_class(path: str | Path) -> List[Tuple[str, str, int, int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            (r["model"], r["label"], int(r["n"]), int(r["correct"]), float(r["accuracy"]))
            for r in csv.DictReader(fh)
        ]
