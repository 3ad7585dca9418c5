"""Stochastic two-view augmentation for contrastive pretraining.

Each call to ``make_pair`` produces two independently augmented views of
one rendered patch. Transforms are gated per view by independent
Bernoulli draws and applied in a fixed canonical order (flips, elastic,
blur, noises, cutout) so that the recorded transcript replays a view
bit-exactly. All transforms act on rendered channel grids of shape
(C, S, S) with values in [0, 1]; outputs are clamped back into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .data.patches import InterferogramPatch
from .errors import ValidationError

_SEED_MAX = 2**63


@dataclass
class AugmentationConfig:
    """Per-transform gates, probabilities and magnitudes.

    ``None`` magnitudes resolve from the patch side at apply time:
    cutout hole = side // 4, elastic alpha = side / 8, elastic sigma = side / 4.
    """

    enable_hflip: bool = True
    enable_vflip: bool = True
    enable_elastic: bool = True
    enable_blur: bool = True
    enable_mult_noise: bool = True
    enable_gauss_noise: bool = True
    enable_cutout: bool = True

    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_elastic: float = 0.5
    p_blur: float = 0.5
    p_mult_noise: float = 0.5
    p_gauss_noise: float = 0.5
    p_cutout: float = 0.5

    elastic_alpha: float | None = None
    elastic_sigma: float | None = None
    blur_kernel: int = 3
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    mult_range: tuple[float, float] = (0.9, 1.1)
    gauss_sigma: float = 0.02
    cutout_hole: int | None = None

    def __post_init__(self) -> None:
        self.blur_sigma = tuple(self.blur_sigma)
        self.mult_range = tuple(self.mult_range)

    def validate(self, side: int) -> None:
        for name in ("hflip", "vflip", "elastic", "blur", "mult_noise", "gauss_noise", "cutout"):
            p = getattr(self, f"p_{name}")
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"p_{name} must lie in [0, 1], got {p}")
        hole = self.cutout_hole if self.cutout_hole is not None else side // 4
        if not 1 <= hole < side:
            raise ValidationError(f"cutout hole must satisfy 1 <= hole < side, got {hole}")
        if self.blur_kernel % 2 != 1 or self.blur_kernel < 1:
            raise ValidationError(f"blur kernel side must be odd and >= 1, got {self.blur_kernel}")
        lo, hi = self.blur_sigma
        if not 0.0 < lo <= hi:
            raise ValidationError(f"blur_sigma must satisfy 0 < lo <= hi, got {self.blur_sigma}")
        if self.elastic_alpha is not None and self.elastic_alpha < 0.0:
            raise ValidationError(f"elastic_alpha must be >= 0, got {self.elastic_alpha}")
        if self.elastic_sigma is not None and self.elastic_sigma <= 0.0:
            raise ValidationError(f"elastic_sigma must be > 0, got {self.elastic_sigma}")
        mlo, mhi = self.mult_range
        if not 0.0 <= mlo <= mhi:
            raise ValidationError(f"mult_range must satisfy 0 <= lo <= hi, got {self.mult_range}")
        if self.gauss_sigma < 0.0:
            raise ValidationError(f"gauss_sigma must be >= 0, got {self.gauss_sigma}")


@dataclass
class AugmentedPair:
    """Two stochastic views of one source patch plus their replay transcripts."""

    view_i: np.ndarray
    view_j: np.ndarray
    origin: InterferogramPatch
    transcript_i: list[dict[str, Any]] = field(default_factory=list)
    transcript_j: list[dict[str, Any]] = field(default_factory=list)


def hflip(channels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(channels[:, :, ::-1])


def vflip(channels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(channels[:, ::-1, :])


def elastic_displacement(
    side: int, alpha: float, sigma: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis displacement fields: smoothed uniform noise scaled by alpha.

    Smoothing a field with values in [-1, 1] by a normalized Gaussian keeps
    it in [-1, 1], so |displacement| <= alpha pointwise.
    """
    dy = alpha * gaussian_filter(rng.uniform(-1.0, 1.0, size=(side, side)), sigma, mode="reflect")
    dx = alpha * gaussian_filter(rng.uniform(-1.0, 1.0, size=(side, side)), sigma, mode="reflect")
    return dy, dx


def elastic_transform(
    channels: np.ndarray,
    alpha: float,
    sigma: float,
    rng: np.random.Generator | int,
) -> np.ndarray:
    """Warp channels by a smooth random displacement field.

    Bilinear resampling with border replication; ``alpha=0`` is the identity.
    """
    if sigma <= 0.0:
        raise ValidationError(f"elastic sigma must be > 0, got {sigma}")
    if alpha < 0.0:
        raise ValidationError(f"elastic alpha must be >= 0, got {alpha}")
    if alpha == 0.0:
        return channels.copy()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    side = channels.shape[-1]
    dy, dx = elastic_displacement(side, alpha, sigma, rng)
    coords = np.arange(side, dtype=np.float64)
    cols, rows = np.meshgrid(coords, coords)
    sample_at = [rows + dy, cols + dx]
    out = np.empty_like(channels)
    for c in range(channels.shape[0]):
        out[c] = map_coordinates(channels[c], sample_at, order=1, mode="nearest")
    return out


def gaussian_blur(channels: np.ndarray, sigma: float, kernel: int = 3) -> np.ndarray:
    radius = kernel // 2
    out = np.empty_like(channels)
    for c in range(channels.shape[0]):
        out[c] = gaussian_filter(channels[c], sigma, radius=radius, mode="reflect")
    return out


def multiplicative_noise(
    channels: np.ndarray, low: float, high: float, rng: np.random.Generator | int
) -> np.ndarray:
    """Scale every pixel by a random factor (shared across channels)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    factors = rng.uniform(low, high, size=channels.shape[-2:]).astype(channels.dtype)
    return np.clip(channels * factors[None, :, :], 0.0, 1.0)


def gaussian_noise(
    channels: np.ndarray, sigma: float, rng: np.random.Generator | int
) -> np.ndarray:
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    noise = rng.normal(0.0, sigma, size=channels.shape).astype(channels.dtype)
    return np.clip(channels + noise, 0.0, 1.0)


def cutout(channels: np.ndarray, hole: int, row: int, col: int) -> np.ndarray:
    """Zero one hole x hole region (must lie fully inside the patch)."""
    side = channels.shape[-1]
    if not (0 <= row <= side - hole and 0 <= col <= side - hole):
        raise ValidationError(f"cutout at ({row}, {col}) size {hole} exceeds side {side}")
    out = channels.copy()
    out[:, row : row + hole, col : col + hole] = 0.0
    return out


def _resolved(config: AugmentationConfig, side: int) -> dict[str, float | int]:
    return {
        "elastic_alpha": config.elastic_alpha if config.elastic_alpha is not None else side / 8.0,
        "elastic_sigma": config.elastic_sigma if config.elastic_sigma is not None else side / 4.0,
        "cutout_hole": config.cutout_hole if config.cutout_hole is not None else side // 4,
    }


def _augment_once(
    channels: np.ndarray, config: AugmentationConfig, rng: np.random.Generator
) -> tuple[np.ndarray, list[dict[str, Any]]]:
    side = channels.shape[-1]
    resolved = _resolved(config, side)
    transcript: list[dict[str, Any]] = []
    out = channels

    def gate(name: str) -> bool:
        return getattr(config, f"enable_{name}") and rng.random() < getattr(config, f"p_{name}")

    if gate("hflip"):
        out = hflip(out)
        transcript.append({"name": "hflip"})
    if gate("vflip"):
        out = vflip(out)
        transcript.append({"name": "vflip"})
    if gate("elastic"):
        step = {
            "name": "elastic",
            "alpha": float(resolved["elastic_alpha"]),
            "sigma": float(resolved["elastic_sigma"]),
            "seed": int(rng.integers(0, _SEED_MAX)),
        }
        out = elastic_transform(out, step["alpha"], step["sigma"], step["seed"])
        transcript.append(step)
    if gate("blur"):
        step = {
            "name": "blur",
            "sigma": float(rng.uniform(*config.blur_sigma)),
            "kernel": int(config.blur_kernel),
        }
        out = gaussian_blur(out, step["sigma"], step["kernel"])
        transcript.append(step)
    if gate("mult_noise"):
        step = {
            "name": "mult_noise",
            "low": float(config.mult_range[0]),
            "high": float(config.mult_range[1]),
            "seed": int(rng.integers(0, _SEED_MAX)),
        }
        out = multiplicative_noise(out, step["low"], step["high"], step["seed"])
        transcript.append(step)
    if gate("gauss_noise"):
        step = {
            "name": "gauss_noise",
            "sigma": float(config.gauss_sigma),
            "seed": int(rng.integers(0, _SEED_MAX)),
        }
        out = gaussian_noise(out, step["sigma"], step["seed"])
        transcript.append(step)
    if gate("cutout"):
        hole = int(resolved["cutout_hole"])
        step = {
            "name": "cutout",
            "hole": hole,
            "row": int(rng.integers(0, side - hole + 1)),
            "col": int(rng.integers(0, side - hole + 1)),
        }
        out = cutout(out, hole, step["row"], step["col"])
        transcript.append(step)

    return np.clip(out, 0.0, 1.0).astype(np.float32), transcript


def replay_transcript(channels: np.ndarray, transcript: list[dict[str, Any]]) -> np.ndarray:
    """Re-apply a recorded transcript to the origin channels, bit-exactly."""
    out = channels
    for step in transcript:
        name = step["name"]
        if name == "hflip":
            out = hflip(out)
        elif name == "vflip":
            out = vflip(out)
        elif name == "elastic":
            out = elastic_transform(out, step["alpha"], step["sigma"], step["seed"])
        elif name == "blur":
            out = gaussian_blur(out, step["sigma"], step["kernel"])
        elif name == "mult_noise":
            out = multiplicative_noise(out, step["low"], step["high"], step["seed"])
        elif name == "gauss_noise":
            out = gaussian_noise(out, step["sigma"], step["seed"])
        elif name == "cutout":
            out = cutout(out, step["hole"], step["row"], step["col"])
        else:
            raise ValidationError(f"unknown transform {name!r} in transcript")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def make_pair(
    patch: InterferogramPatch, config: AugmentationConfig, rng: np.random.Generator | int
) -> AugmentedPair:
    """Create the two augmented views of one rendered patch.

    Each view samples its own transform gates and parameters from ``rng``.
    """
    if patch.channels is None:
        raise ValidationError("patch must be rendered (channels present) before augmentation")
    config.validate(patch.side)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    view_i, transcript_i = _augment_once(patch.channels, config, rng)
    view_j, transcript_j = _augment_once(patch.channels, config, rng)
    return AugmentedPair(
        view_i=view_i,
        view_j=view_j,
        origin=patch,
        transcript_i=transcript_i,
        transcript_j=transcript_j,
    )
