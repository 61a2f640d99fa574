"""Run configuration: nested sections with defaults, YAML loading and validation.

Unknown keys and wrongly typed values are rejected with the line number of the
offending entry. Precedence is CLI flags over file values over defaults.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from .masks import FieldOfView, FrameGeometry, GeometryError, Variant, VisualFieldParams

OUTPUT_ROOT_ENV = "BLINDSPOT_OUTPUT_ROOT"


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        prefix = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(prefix + message)


@dataclass
class GeometrySection:
    variant: str = "blindspot"
    camera_fov: str = ""  # empty: 109x70, or 200x135 for the center variant
    frame: str = "224x224"
    patch: int = 16
    central_fov: str = "60x60"
    blindspot_size: str = "5x7"
    eccentricity: float = 15.0
    vertical_offset: float = 0.0
    tube_ratio: float = 0.9
    mask_seed: int = 0


@dataclass
class ModelSection:
    embed_dim: int = 192
    depth: int = 4
    n_heads: int = 3
    decoder_dim: int = 96
    decoder_depth: int = 1
    decoder_heads: int = 3
    mlp_ratio: float = 4.0
    learnable_pos: bool = False


@dataclass
class PretrainSection:
    steps: int = 600
    batch_size: int = 16
    lr: float = 1.5e-4
    weight_decay: float = 0.05


@dataclass
class MultimodalSection:
    steps: int = 10000
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.1
    tau: float = 0.07
    dim: int = 512
    normalize: bool = True


@dataclass
class DataSection:
    n_concepts: int = 8
    clips_per_concept: int = 40
    source_frames: int = 16
    height: int = 112
    width: int = 112
    fps: float = 30.0
    clip_frames: int = 4
    clip_stride: int = 1
    crop_size: int = 112
    pretrain_clips: int = 64
    corpus_seed: int = 0


@dataclass
class CurationSection:
    length: str = "4s"
    min_similarity: float = 0.99
    stride_s: float = 0.0
    report_stride_s: float = 4.0  # stride of the last filtered row in the curation report
    period: int = 30
    n_sources: int = 6
    n_planted: int = 20
    n_decoys: int = 20


@dataclass
class EvaluationSection:
    n_trials: int = 1000
    trial_seed: int = 0
    probe_epochs: int = 300
    heldout_seed: int = 1


@dataclass
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    multimodal: MultimodalSection = field(default_factory=MultimodalSection)
    data: DataSection = field(default_factory=DataSection)
    curation: CurationSection = field(default_factory=CurationSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seed: int = 0
    output_dir: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def hashable(self) -> Dict[str, Any]:
        """Everything that affects results; output location excluded."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def output_root(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ROOT_ENV, "runs"))

    # -- derived objects ----------------------------------------------------

    def frame_geometry(self) -> FrameGeometry:
        h, w = _parse_pair(self.geometry.frame, "geometry.frame", int)
        return FrameGeometry(h, w, self.geometry.patch)

    def camera(self) -> Optional[FieldOfView]:
        return FieldOfView.parse(self.geometry.camera_fov) if self.geometry.camera_fov else None

    def visual_field(self) -> VisualFieldParams:
        bw, bh = _parse_pair(self.geometry.blindspot_size, "geometry.blindspot_size", float)
        return VisualFieldParams(
            central_fov=FieldOfView.parse(self.geometry.central_fov),
            blindspot_width_deg=bw,
            blindspot_height_deg=bh,
            blindspot_eccentricity_deg=self.geometry.eccentricity,
            blindspot_vertical_offset_deg=self.geometry.vertical_offset,
        )

    def validate(self) -> "RunConfig":
        """Semantic checks beyond types; raises :class:`ConfigError`."""
        try:
            Variant(self.geometry.variant)
        except ValueError:
            raise ConfigError(
                f"geometry.variant must be one of {[v.value for v in Variant]}, got {self.geometry.variant!r}"
            ) from None
        try:
            self.frame_geometry()
            self.camera()
            self.visual_field()
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.geometry.tube_ratio < 1:
            raise ConfigError("geometry.tube_ratio must lie in (0, 1)")
        if self.model.embed_dim % self.model.n_heads:
            raise ConfigError("model.embed_dim must be divisible by model.n_heads")
        if self.model.decoder_dim % self.model.decoder_heads:
            raise ConfigError("model.decoder_dim must be divisible by model.decoder_heads")
        if self.multimodal.tau <= 0:
            raise ConfigError("multimodal.tau must be positive")
        d = self.data
        if d.crop_size % self.geometry.patch or d.clip_frames % 2:
            raise ConfigError("data.crop_size must be a multiple of the patch and clip_frames even")
        if (d.clip_frames - 1) * d.clip_stride + 1 > d.source_frames:
            raise ConfigError("data.clip_frames at data.clip_stride does not fit in data.source_frames")
        for name in ("steps", "batch_size"):
            if getattr(self.pretrain, name) < 0 or getattr(self.multimodal, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        return self


def _parse_pair(text: str, key: str, kind):
    try:
        a, b = (kind(p) for p in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"{key} must look like AxB, got {text!r}") from None
    return a, b


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(value: Any, default: Any, key: str, line: Optional[int], source: str) -> Any:
    kind = type(default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in {"true", "false", "1", "0", "yes", "no"}:
            return value.lower() in {"true", "1", "yes"}
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif kind is str:
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            return str(value)
    raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}", line, source)


def apply_values(config: RunConfig, values: Mapping[str, Any], lines: Mapping[str, int] | None = None, source: str = "<config>") -> RunConfig:
    """Apply dotted ``section.key`` values; unknown keys raise with their line."""
    lines = lines or {}
    for dotted, value in values.items():
        line = lines.get(dotted)
        parts = dotted.split(".")
        if len(parts) == 1:
            name = parts[0]
            if name not in ("seed", "output_dir"):
                raise ConfigError(f"unknown key {dotted!r}", line, source)
            setattr(config, name, _coerce(value, getattr(config, name), dotted, line, source))
            continue
        if len(parts) != 2 or parts[0] not in ("geometry", "model", "pretrain", "multimodal", "data", "curation", "evaluation"):
            raise ConfigError(f"unknown key {dotted!r}", line, source)
        section = getattr(config, parts[0])
        if parts[1] not in {f.name for f in fields(section)}:
            raise ConfigError(f"unknown key {dotted!r}", line, source)
        setattr(section, parts[1], _coerce(value, getattr(section, parts[1]), dotted, line, source))
    return config


def _flatten_yaml(text: str, source: str):
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None, source) from None
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    if root is None:
        return values, lines
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", root.start_mark.line + 1, source)
    loader_value = lambda node: yaml.safe_load(yaml.serialize(node))  # noqa: E731
    for key_node, val_node in root.value:
        key = key_node.value
        if isinstance(val_node, yaml.MappingNode):
            for k2, v2 in val_node.value:
                dotted = f"{key}.{k2.value}"
                if isinstance(v2, (yaml.MappingNode, yaml.SequenceNode)):
                    raise ConfigError(f"{dotted}: nested values are not allowed", k2.start_mark.line + 1, source)
                values[dotted] = loader_value(v2)
                lines[dotted] = k2.start_mark.line + 1
        elif isinstance(val_node, yaml.SequenceNode):
            raise ConfigError(f"{key}: lists are not allowed", key_node.start_mark.line + 1, source)
        else:
            if key in _SECTIONS and key not in ("seed", "output_dir"):
                raise ConfigError(f"{key} must be a mapping", key_node.start_mark.line + 1, source)
            values[key] = loader_value(val_node)
            lines[key] = key_node.start_mark.line + 1
    return values, lines


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config file not found", source=str(path))
        values, lines = _flatten_yaml(path.read_text(encoding="utf-8"), str(path))
        apply_values(config, values, lines, str(path))
    if overrides:
        apply_values(config, overrides, source="<command line>")
    return config.validate()


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)
