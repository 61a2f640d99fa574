"""Single-file checkpoints: named arrays plus a JSON manifest, written atomically."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Tuple

import numpy as np
import torch

MANIFEST_KEY = "__manifest__"


def state_to_arrays(module: torch.nn.Module, prefix: str = "") -> Dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def arrays_to_state(arrays: Mapping[str, np.ndarray], prefix: str = "") -> Dict[str, torch.Tensor]:
    return {k[len(prefix):]: torch.from_numpy(np.array(v)) for k, v in arrays.items() if k.startswith(prefix)}


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], manifest: Mapping[str, Any]) -> Path:
    """Write ``arrays`` and ``manifest`` to one ``.npz`` file via temp file + rename."""
    path = Path(path)
    if MANIFEST_KEY in arrays:
        raise ValueError(f"{MANIFEST_KEY!r} is reserved")
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload[MANIFEST_KEY] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    buf = io.BytesIO()
    np.savez(buf, **payload)
    _atomic_write_bytes(path, buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != MANIFEST_KEY}
        manifest = json.loads(data[MANIFEST_KEY].tobytes().decode("utf-8"))
    return arrays, manifest


def write_loss_log(path: str | Path, losses: Iterable[Tuple[int, float]]) -> Path:
    """CSV ``step,loss``; values use ``repr`` so reruns compare byte-for-byte."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss"])
    for step, loss in losses:
        writer.writerow([step, repr(float(loss))])
    path = Path(path)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
    return path


def read_loss_log(path: str | Path) -> list[Tuple[int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(row["step"]), float(row["loss"])) for row in csv.DictReader(fh)]
