"""Desk-scale synthetic fringe generator.

Produces two separable classes of wrapped-phase patches: deformation
patches contain a concentric fringe bullseye (a radially decaying
displacement field wrapped mod 2*pi), non-deformation patches only a
smooth random ramp plus optional Gaussian phase noise. Parameter draws
are split out (``draw_truths``) so tests and the CAM localization check
can recover the ground-truth fringe center and disk radius without
re-running the pixel work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .patches import InterferogramPatch, LabeledPatch, MIN_SIDE, PatchMeta, TWO_PI, wrap_phase

# Background ramps span up to this many fringe cycles across the patch;
# the reference phase is canonical (zero offset) so the desk task stays
# separable for a linear pixel-space baseline.
RAMP_MAX_CYCLES = 0.75
# Bullseye placement/scale relative to the patch side.
CENTER_RANGE = (0.40, 0.60)
SIGMA_RANGE = (0.12, 0.15)


@dataclass(frozen=True)
class SyntheticFringeSpec:
    n_samples: int
    side: int = 32
    deformation_fraction: float = 0.5
    fringe_cycles: tuple[float, float] = (1.5, 2.5)
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.side < MIN_SIDE:
            raise ValidationError(f"side must be >= {MIN_SIDE}, got {self.side}")
        if not 0.0 <= self.deformation_fraction <= 1.0:
            raise ValidationError(
                f"deformation_fraction must lie in [0, 1], got {self.deformation_fraction}"
            )
        lo, hi = self.fringe_cycles
        if not 0.0 < lo <= hi:
            raise ValidationError(f"fringe_cycles must satisfy 0 < lo <= hi, got {self.fringe_cycles}")
        if self.noise_sigma < 0.0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        object.__setattr__(self, "fringe_cycles", (float(lo), float(hi)))


@dataclass(frozen=True)
class SampleTruth:
    """Everything needed to re-render one sample and locate its fringes."""

    index: int
    label: int
    ramp_theta: float
    ramp_cycles: float
    ramp_offset: float
    noise_seed: int
    center: tuple[float, float] | None = None  # (row, col), deformation only
    sigma: float | None = None
    cycles: float | None = None
    disk_radius: float | None = None


def positive_count(spec: SyntheticFringeSpec) -> int:
    """Deformation count: nearest integer, ties toward more positives."""
    return math.floor(spec.deformation_fraction * spec.n_samples + 0.5)


def draw_truths(spec: SyntheticFringeSpec) -> list[SampleTruth]:
    """Draw all per-sample parameters; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n_pos = positive_count(spec)
    lo, hi = spec.fringe_cycles
    truths = []
    for i in range(spec.n_samples):
        label = 1 if i < n_pos else 0
        theta = float(rng.uniform(0.0, TWO_PI))
        ramp_cycles = float(rng.uniform(0.0, RAMP_MAX_CYCLES))
        offset = 0.0  # canonical reference phase
        center = sigma = cycles = radius = None
        if label:
            center = (
                float(rng.uniform(*CENTER_RANGE) * spec.side),
                float(rng.uniform(*CENTER_RANGE) * spec.side),
            )
            sigma = float(rng.uniform(*SIGMA_RANGE) * spec.side)
            cycles = float(rng.uniform(lo, hi))
            radius = fringe_disk_radius(sigma, cycles)
        noise_seed = int(rng.integers(0, 2**63))
        truths.append(
            SampleTruth(
                index=i,
                label=label,
                ramp_theta=theta,
                ramp_cycles=ramp_cycles,
                ramp_offset=offset,
                noise_seed=noise_seed,
                center=center,
                sigma=sigma,
                cycles=cycles,
                disk_radius=radius,
            )
        )
    return truths


def fringe_disk_radius(sigma: float, cycles: float) -> float:
    """Radius of the outermost rendered-cosine zero crossing.

    The bullseye displacement is u(r) = 2*pi*cycles*exp(-r^2 / (2*sigma^2));
    the last cos(u) sign change sits where u = pi/2, i.e. at
    sigma*sqrt(2*ln(4*cycles)). Below a quarter cycle there is no crossing
    and the core scale sigma is returned.
    """
    if 4.0 * cycles <= 1.0:
        return sigma
    return sigma * math.sqrt(2.0 * math.log(4.0 * cycles))


def ramp_field(side: int, theta: float, cycles: float, offset: float) -> np.ndarray:
    """Planar displacement spanning ``cycles`` fringes across the side."""
    coords = np.arange(side, dtype=np.float64)
    cols, rows = np.meshgrid(coords, coords)
    k = TWO_PI * cycles / side
    return k * (math.cos(theta) * cols + math.sin(theta) * rows) + offset


def bullseye_field(side: int, center: tuple[float, float], cycles: float, sigma: float) -> np.ndarray:
    """Radially decaying displacement producing ``cycles`` concentric fringes."""
    coords = np.arange(side, dtype=np.float64)
    cols, rows = np.meshgrid(coords, coords)
    r2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
    return TWO_PI * cycles * np.exp(-r2 / (2.0 * sigma**2))


def render_sample(spec: SyntheticFringeSpec, truth: SampleTruth) -> LabeledPatch:
    """Render one sample from its drawn parameters (pure function)."""
    u = ramp_field(spec.side, truth.ramp_theta, truth.ramp_cycles, truth.ramp_offset)
    if truth.label:
        u = u + bullseye_field(spec.side, truth.center, truth.cycles, truth.sigma)
    if spec.noise_sigma > 0.0:
        noise_rng = np.random.default_rng(truth.noise_seed)
        u = u + noise_rng.normal(0.0, spec.noise_sigma, size=(spec.side, spec.side))
    patch = InterferogramPatch(
        phase=wrap_phase(u),
        meta=PatchMeta(source_id=f"synth-{spec.seed}-{truth.index:05d}"),
    )
    return LabeledPatch(patch=patch, label=truth.label)


def generate_synthetic(spec: SyntheticFringeSpec) -> list[LabeledPatch]:
    """Generate ``spec.n_samples`` labeled patches, bit-identical per spec."""
    return [render_sample(spec, truth) for truth in draw_truths(spec)]


def write_synthetic_dataset(
    out_dir,
    train_spec: SyntheticFringeSpec,
    test_spec: SyntheticFringeSpec | None = None,
):
    """Write patch files plus a labeled manifest; returns the manifest path."""
    from pathlib import Path

    from .manifest import DatasetManifest, ManifestEntry, save_manifest
    from .patches import write_patch_file

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    jobs = [("synth-", train_spec, "train")]
    if test_spec is not None:
        jobs.append(("synth-test-", test_spec, "test"))
    for prefix, spec, split in jobs:
        for item in generate_synthetic(spec):
            name = f"{prefix}{item.patch.meta.source_id.split('-')[-1]}.iph"
            write_patch_file(out_dir / name, item.patch.phase)
            entries.append(ManifestEntry(name, item.label, split))
    manifest_path = out_dir / "manifest.txt"
    save_manifest(DatasetManifest(entries=entries, root=out_dir), manifest_path)
    return manifest_path
