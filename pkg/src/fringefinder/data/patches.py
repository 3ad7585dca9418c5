"""Wrapped-phase patch type, channel rendering, and the flat binary patch format.

A patch holds one square grid of wrapped interferometric phase in radians,
always inside the half-open interval [-pi, pi). Encoders never see radians
directly: ``render_channels`` turns the phase into image planes in [0, 1].
The default 3-plane rendering uses (cos+1)/2 and (sin+1)/2, which are
continuous across the wrap seam, plus the normalized phase itself.

Patch files are a fixed little-endian layout: magic ``IPH1``, uint32 side,
then side*side float32 values in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError

TWO_PI = 2.0 * np.pi

PATCH_MAGIC = b"IPH1"
MIN_SIDE = 8

GEOMETRIES = ("ascending", "descending", "unknown")
FILTERINGS = ("goldstein", "unfiltered", "unknown")
OVERLAYS = ("phase_only", "amplitude_overlay", "unknown")

# Largest float32 interval strictly inside (-pi, pi); float32 rounds the
# float64 boundaries outward, so values are clipped here before storage.
_F32_PHASE_LIMIT = float(np.nextafter(np.float32(np.pi), np.float32(0.0)))


def wrap_phase(values: np.ndarray | float) -> np.ndarray:
    """Wrap arbitrary phase values into [-pi, pi), element-wise.

    ``wrap_phase(d + 2*pi)`` equals ``wrap_phase(d)`` up to float rounding
    (equality holds in the circular metric; inputs within one ulp of the
    seam may land on either end of the interval).
    """
    x = np.asarray(values, dtype=np.float64)
    wrapped = np.mod(x + np.pi, TWO_PI) - np.pi
    # np.mod can return the full period for inputs a hair below a seam.
    return np.where(wrapped >= np.pi, -np.pi, wrapped)


@dataclass
class PatchMeta:
    """Acquisition metadata carried alongside a patch."""

    source_id: str = ""
    geometry: str = "unknown"
    filtered: str = "unknown"
    overlay: str = "unknown"

    def __post_init__(self) -> None:
        if self.geometry not in GEOMETRIES:
            raise ValidationError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.filtered not in FILTERINGS:
            raise ValidationError(f"filtered must be one of {FILTERINGS}, got {self.filtered!r}")
        if self.overlay not in OVERLAYS:
            raise ValidationError(f"overlay must be one of {OVERLAYS}, got {self.overlay!r}")


@dataclass
class InterferogramPatch:
    """One square wrapped-phase patch plus optional rendered channels.

    ``phase`` is float64 (side, side) in [-pi, pi); ``channels`` is float32
    (C, side, side) in [0, 1] once rendered, or None.
    """

    phase: np.ndarray
    channels: np.ndarray | None = None
    meta: PatchMeta = field(default_factory=PatchMeta)

    def __post_init__(self) -> None:
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.phase.ndim != 2 or self.phase.shape[0] != self.phase.shape[1]:
            raise ValidationError(f"phase grid must be square 2-D, got shape {self.phase.shape}")
        if self.side < MIN_SIDE:
            raise ValidationError(f"patch side must be >= {MIN_SIDE}, got {self.side}")
        _check_phase_range(self.phase)
        if self.channels is not None:
            self.channels = np.asarray(self.channels, dtype=np.float32)
            _check_channels(self.channels, self.side)

    @property
    def side(self) -> int:
        return int(self.phase.shape[0])


@dataclass
class LabeledPatch:
    """A patch with its binary deformation label (1 = deformation)."""

    patch: InterferogramPatch
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label!r}")


def _check_phase_range(phase: np.ndarray) -> None:
    if not np.all(np.isfinite(phase)):
        raise ValidationError("phase contains non-finite values")
    if phase.size and (phase.min() < -np.pi or phase.max() >= np.pi):
        raise ValidationError(
            f"phase must lie in [-pi, pi); found range [{phase.min():.6f}, {phase.max():.6f}]"
        )


def _check_channels(channels: np.ndarray, side: int) -> None:
    if channels.ndim != 3 or channels.shape[1:] != (side, side):
        raise ValidationError(
            f"channels must have shape (C, {side}, {side}), got {channels.shape}"
        )
    if channels.size and (channels.min() < 0.0 or channels.max() > 1.0):
        raise ValidationError("channel values must lie in [0, 1]")


def render_channels(patch: InterferogramPatch, n_channels: int = 3) -> InterferogramPatch:
    """Return a copy of ``patch`` with rendered channel planes in [0, 1].

    Rendering is a pure function of the phase. With ``n_channels=3`` the
    planes are (cos+1)/2, (sin+1)/2 and (phi+pi)/(2*pi); with
    ``n_channels=1`` only the normalized-phase plane is produced.
    """
    if n_channels not in (1, 3):
        raise ValidationError(f"n_channels must be 1 or 3, got {n_channels}")
    phi = patch.phase
    _check_phase_range(phi)
    norm = (phi + np.pi) / TWO_PI
    if n_channels == 1:
        planes = [norm]
    else:
        planes = [(np.cos(phi) + 1.0) / 2.0, (np.sin(phi) + 1.0) / 2.0, norm]
    channels = np.clip(np.stack(planes), 0.0, 1.0).astype(np.float32)
    return InterferogramPatch(phase=phi.copy(), channels=channels, meta=patch.meta)


def write_patch_file(path: str | Path, phase: np.ndarray) -> None:
    """Write one wrapped-phase grid in the IPH1 layout.

    Values are clipped into the widest float32 interval strictly inside
    (-pi, pi) so the stored float32 values keep the range invariant.
    """
    phase = np.asarray(phase, dtype=np.float64)
    if phase.ndim != 2 or phase.shape[0] != phase.shape[1]:
        raise ValidationError(f"phase grid must be square 2-D, got shape {phase.shape}")
    _check_phase_range(phase)
    clipped = np.clip(phase, -_F32_PHASE_LIMIT, _F32_PHASE_LIMIT).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(PATCH_MAGIC)
        fh.write(struct.pack("<I", phase.shape[0]))
        fh.write(clipped.tobytes(order="C"))


def read_patch_file(path: str | Path) -> np.ndarray:
    """Read an IPH1 patch file, returning float64 phase in [-pi, pi).

    Foreign files whose float32 values ride the interval boundary are
    re-wrapped rather than rejected.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != PATCH_MAGIC:
        raise ValidationError(f"{path}: not an IPH1 patch file")
    (side,) = struct.unpack("<I", blob[4:8])
    expected = 8 + 4 * side * side
    if side < MIN_SIDE:
        raise ValidationError(f"{path}: side {side} below minimum {MIN_SIDE}")
    if len(blob) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=8).reshape(side, side)
    return wrap_phase(values.astype(np.float64))


def image_to_phase(path: str | Path) -> np.ndarray:
    """Convert a grayscale (or color) image into wrapped phase.

    Gray levels [0, 255] map linearly onto [-pi, pi): phi = g*(2*pi/256) - pi.
    The image must be square with side >= 8.
    """
    from PIL import Image

    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"), dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] != gray.shape[1]:
        raise ValidationError(f"{path}: image must be square, got {gray.shape}")
    if gray.shape[0] < MIN_SIDE:
        raise ValidationError(f"{path}: image side {gray.shape[0]} below minimum {MIN_SIDE}")
    return gray * (TWO_PI / 256.0) - np.pi
