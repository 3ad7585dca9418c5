"""Backbones, projection head, linear classifier, and class activation maps.

The backbone maps a rendered patch batch (N, C, S, S) to a representation
h of width D_h taken after global average pooling. The projection head
g(h) = W2 * relu(W1 * h + b1) + b2 feeds the contrastive loss during
pretraining and is discarded for classification; the linear classifier
consumes h directly. Class activation maps are the classifier-weighted
sum of the final pre-pooling feature maps, rectified, bilinearly
upsampled to the patch side and min-max normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ValidationError

BACKBONES = ("tiny-conv", "resnet18", "resnet34", "resnet50")
_RESNET_DIMS = {"resnet18": 512, "resnet34": 512, "resnet50": 2048}
_TINY_DEFAULT_DIM = 64


@dataclass
class EncoderConfig:
    backbone: str = "tiny-conv"
    input_side: int = 32
    input_channels: int = 3
    representation_dim: int | None = None  # resolved from backbone when None
    projection_hidden: int | None = None  # defaults to representation dim
    projection_dim: int = 128
    projection_bias: bool = True
    init: str = "random"  # random | imported
    weights_path: str | None = None

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValidationError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.init not in ("random", "imported"):
            raise ValidationError(f"init must be 'random' or 'imported', got {self.init!r}")
        if self.input_channels not in (1, 3):
            raise ValidationError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.input_side < 8:
            raise ValidationError(f"input_side must be >= 8, got {self.input_side}")
        if self.backbone != "tiny-conv" and self.representation_dim not in (
            None,
            _RESNET_DIMS[self.backbone],
        ):
            raise ValidationError(
                f"{self.backbone} has a fixed representation width of {_RESNET_DIMS[self.backbone]}"
            )

    @property
    def resolved_dim(self) -> int:
        if self.backbone == "tiny-conv":
            return self.representation_dim or _TINY_DEFAULT_DIM
        return _RESNET_DIMS[self.backbone]

    @property
    def resolved_hidden(self) -> int:
        return self.projection_hidden or self.resolved_dim


class TinyConvBackbone(nn.Module):
    """Four conv blocks (strides 2, 2, 1, 1) with global average pooling.

    Channel widths scale with the representation dim d: d/4, d/2, d, d.
    The late stride-1 blocks keep the feature maps at side/4 so class
    activation maps have usable spatial resolution. CPU-trainable in
    seconds at side 32; same interface as the ResNets.
    """

    def __init__(self, in_channels: int, dim: int = _TINY_DEFAULT_DIM):
        super().__init__()
        widths = [max(1, dim // 4), max(1, dim // 2), dim, dim]
        strides = [2, 2, 1, 1]
        blocks = []
        prev = in_channels
        for width, stride in zip(widths, strides):
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(prev, width, kernel_size=3, stride=stride, padding=1, bias=False),
                    nn.BatchNorm2d(width),
                    nn.ReLU(inplace=True),
                )
            )
            prev = width
        self.blocks = nn.ModuleList(blocks)
        self.out_dim = dim

    def features(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        maps = self.features(x)
        return torch.flatten(F.adaptive_avg_pool2d(maps, 1), 1)

    def late_stages(self) -> list[nn.Module]:
        return [self.blocks[2], self.blocks[3]]


class ResNetBackbone(nn.Module):
    """torchvision ResNet trunk up to average pooling (fc removed)."""

    def __init__(self, name: str, in_channels: int, init: str, weights_path: str | None):
        super().__init__()
        from torchvision import models

        builder = getattr(models, name)
        net = builder(weights=None)
        if init == "imported":
            if weights_path:
                state = torch.load(weights_path, map_location="cpu", weights_only=True)
                net.load_state_dict(state, strict=False)
            else:
                net = _imagenet_resnet(builder, name)
        if in_channels != 3:
            old = net.conv1
            net.conv1 = nn.Conv2d(
                in_channels,
                old.out_channels,
                kernel_size=old.kernel_size,
                stride=old.stride,
                padding=old.padding,
                bias=False,
            )
        net.fc = nn.Identity()  # the classification head lives outside the backbone
        self.net = net
        self.out_dim = _RESNET_DIMS[name]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        n = self.net
        x = n.relu(n.bn1(n.conv1(x)))
        x = n.maxpool(x)
        x = n.layer1(x)
        x = n.layer2(x)
        x = n.layer3(x)
        return n.layer4(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.net.avgpool(self.features(x)), 1)

    def late_stages(self) -> list[nn.Module]:
        return [self.net.layer3, self.net.layer4]


def _imagenet_resnet(builder, name: str):
    from torchvision import models

    enum_name = {"resnet18": "ResNet18_Weights", "resnet34": "ResNet34_Weights", "resnet50": "ResNet50_Weights"}
    try:
        weights = getattr(models, enum_name[name]).IMAGENET1K_V1
        return builder(weights=weights)
    except Exception as exc:  # downloading needs network access
        raise ConfigurationError(
            f"could not fetch ImageNet weights for {name}; supply weights_path instead ({exc})"
        ) from exc


class ProjectionHead(nn.Module):
    """MLP g(h) = W2 * relu(W1 * h + b1) + b2 into the contrastive space."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, bias: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.linear1 = nn.Linear(in_dim, hidden_dim, bias=bias)
        self.linear2 = nn.Linear(hidden_dim, out_dim, bias=bias)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.linear2(F.relu(self.linear1(h)))


class ClassifierHead(nn.Module):
    """Linear two-logit classifier on the representation h (not z)."""

    def __init__(self, in_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.linear = nn.Linear(in_dim, 2, bias=True)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.linear(h)


class EncoderModel(nn.Module):
    """Backbone f, projection head g, and linear classifier, as one unit."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        if config.backbone == "tiny-conv":
            if config.init == "imported" and not config.weights_path:
                raise ConfigurationError("tiny-conv import requires weights_path")
            self.backbone = TinyConvBackbone(config.input_channels, config.resolved_dim)
            if config.init == "imported":
                state = torch.load(config.weights_path, map_location="cpu", weights_only=True)
                self.backbone.load_state_dict(state)
        else:
            self.backbone = ResNetBackbone(
                config.backbone, config.input_channels, config.init, config.weights_path
            )
        self.projection = ProjectionHead(
            config.resolved_dim,
            config.resolved_hidden,
            config.projection_dim,
            bias=config.projection_bias,
        )
        self.classifier = ClassifierHead(config.resolved_dim)

    def representation(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def feature_maps(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone.features(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.backbone(x))


def build_model(config: EncoderConfig, seed: int = 0) -> EncoderModel:
    """Construct a model with seeded, reproducible initialization."""
    torch.manual_seed(seed)
    return EncoderModel(config)


def _as_batch_tensor(batch: np.ndarray | torch.Tensor) -> torch.Tensor:
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(np.ascontiguousarray(batch))
    return batch.float()


def encode(model: EncoderModel, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Inference-mode representations for a rendered batch (N, C, S, S)."""
    x = _as_batch_tensor(batch)
    cfg = model.config
    if x.dim() != 4 or x.shape[1] != cfg.input_channels or x.shape[2:] != (cfg.input_side, cfg.input_side):
        raise ValidationError(
            f"batch shape {tuple(x.shape)} does not match configured "
            f"(N, {cfg.input_channels}, {cfg.input_side}, {cfg.input_side})"
        )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            h = model.representation(x)
    finally:
        model.train(was_training)
    return h


def project(head: ProjectionHead, h: torch.Tensor) -> torch.Tensor:
    """Embed representations; differentiable (used inside the training loop)."""
    if h.dim() != 2 or h.shape[1] != head.in_dim:
        raise ValidationError(f"representation width {tuple(h.shape)} != expected {head.in_dim}")
    return head(h)


def classify(head: ClassifierHead, h: torch.Tensor) -> torch.Tensor:
    if h.dim() != 2 or h.shape[1] != head.in_dim:
        raise ValidationError(f"representation width {tuple(h.shape)} != expected {head.in_dim}")
    return head(h)


def predict_labels(logits: torch.Tensor) -> torch.Tensor:
    """Argmax with ties broken toward label 0 (non-deformation)."""
    return (logits[:, 1] > logits[:, 0]).long()


def cam(
    model: EncoderModel,
    channels: np.ndarray | torch.Tensor,
    class_index: int,
) -> np.ndarray:
    """Class activation map for one rendered patch, in [0, 1].

    Weighted sum of the final feature maps by the classifier weights of
    ``class_index``, rectified, bilinearly upsampled to the patch side,
    then min-max normalized (a constant map yields all zeros).
    """
    if class_index not in (0, 1):
        raise ValidationError(f"class_index must be 0 or 1, got {class_index}")
    x = _as_batch_tensor(channels)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.shape[0] != 1:
        raise ValidationError("cam expects a single patch")
    side = model.config.input_side
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            maps = model.feature_maps(x)[0]
            weights = model.classifier.linear.weight[class_index]
            raw = F.relu(torch.einsum("k,khw->hw", weights, maps))
            up = F.interpolate(
                raw[None, None], size=(side, side), mode="bilinear", align_corners=False
            )[0, 0]
    finally:
        model.train(was_training)
    lo, hi = float(up.min()), float(up.max())
    if hi - lo <= 0.0:
        return np.zeros((side, side), dtype=np.float32)
    return ((up - lo) / (hi - lo)).numpy().astype(np.float32)
