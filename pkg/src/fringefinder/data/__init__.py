"""Patch types, manifests, synthetic fringe generation, and batch samplers."""

from .patches import (
    InterferogramPatch,
    LabeledPatch,
    PatchMeta,
    image_to_phase,
    read_patch_file,
    render_channels,
    wrap_phase,
    write_patch_file,
)
from .manifest import DatasetManifest, ManifestEntry, ManifestStats, load_manifest, save_manifest
from .synthetic import (
    SampleTruth,
    SyntheticFringeSpec,
    bullseye_field,
    draw_truths,
    fringe_disk_radius,
    generate_synthetic,
    positive_count,
    ramp_field,
    render_sample,
    write_synthetic_dataset,
)
from .sampling import balanced_batches, balanced_sampler, sequential_batches

__all__ = [
    "InterferogramPatch",
    "LabeledPatch",
    "PatchMeta",
    "wrap_phase",
    "render_channels",
    "read_patch_file",
    "write_patch_file",
    "image_to_phase",
    "DatasetManifest",
    "ManifestEntry",
    "ManifestStats",
    "load_manifest",
    "save_manifest",
    "SyntheticFringeSpec",
    "SampleTruth",
    "positive_count",
    "draw_truths",
    "bullseye_field",
    "fringe_disk_radius",
    "ramp_field",
    "render_sample",
    "generate_synthetic",
    "write_synthetic_dataset",
    "balanced_batches",
    "balanced_sampler",
    "sequential_batches",
]
