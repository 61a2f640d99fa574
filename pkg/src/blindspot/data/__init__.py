"""Clip handling, augmentation, curation and the synthetic corpus."""

from .clips import VideoSource, Chunk, chunk_video, sample_clip, stack_image, load_source, save_source
from .augment import Mode, augment
from .manifest import ClipManifestEntry, read_manifest, write_manifest
from .curation import CurationConfig, LabeledImage, PixelEmbedder, curate, curation_report, filter_entries

__all__ = [
    "VideoSource", "Chunk", "chunk_video", "sample_clip", "stack_image", "load_source", "save_source",
    "Mode", "augment",
    "ClipManifestEntry", "read_manifest", "write_manifest",
    "CurationConfig", "LabeledImage", "PixelEmbedder", "curate", "curation_report", "filter_entries",
]
