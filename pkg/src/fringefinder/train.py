"""Two-stage training: contrastive pretraining, then supervised fine-tuning.

Pretraining ignores labels: every batch of N patches becomes 2N augmented
views whose interleaved embeddings feed the contrastive loss, and one
Adam step updates backbone plus projection head. Fine-tuning draws
class-balanced oversampled batches (or a sequential control), optimizes
two-class cross-entropy on the classifier head, and honours the unfreeze
setting: ``head_only`` keeps every non-head parameter bit-identical,
``head_plus_late_blocks`` also trains the last two backbone stages.

Checkpoints are written at the end of every epoch (plus best-validation
during fine-tuning) and carry optimizer state and all RNG streams, so a
resumed run reproduces an uninterrupted one bit for bit under the
single-worker determinism profile.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationConfig, make_pair
from .checkpoint import (
    Checkpoint,
    TrainState,
    load_checkpoint,
    load_model_tensors,
    load_optimizer_tensors,
    model_tensors,
    optimizer_tensors,
    restore_torch_rng,
    save_checkpoint,
    torch_rng_tensor,
)
from .contrast import LossConfig, ntxent_batch
from .data.manifest import DatasetManifest
from .data.patches import InterferogramPatch, PatchMeta, read_patch_file, render_channels
from .data.sampling import balanced_batches, sequential_batches
from .encoder import EncoderConfig, EncoderModel, build_model, predict_labels
from .errors import ConfigurationError, ValidationError


@dataclass
class PretrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigurationError("contrastive batches need at least 2 patches")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ConfigurationError("epochs and learning_rate must be >= 0")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")


UNFREEZE_MODES = ("head_only", "head_plus_late_blocks")
SAMPLERS = ("balanced", "sequential")


@dataclass
class FinetuneConfig:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 3e-3
    unfreeze: str = "head_only"
    sampler: str = "balanced"
    optimizer: str = "adam"
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ConfigurationError("epochs and learning_rate must be >= 0")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")
        if self.unfreeze not in UNFREEZE_MODES:
            raise ConfigurationError(f"unfreeze must be one of {UNFREEZE_MODES}")
        if self.sampler not in SAMPLERS:
            raise ConfigurationError(f"sampler must be one of {SAMPLERS}")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")


def load_split(
    manifest: DatasetManifest, split: str, encoder_cfg: EncoderConfig
) -> tuple[list[InterferogramPatch], list[int | None]]:
    """Read and render every patch of one split, preserving manifest order."""
    patches: list[InterferogramPatch] = []
    labels: list[int | None] = []
    for entry in manifest.split_entries(split):
        phase = read_patch_file(manifest.resolve(entry))
        if phase.shape[0] != encoder_cfg.input_side:
            raise ValidationError(
                f"{entry.path}: side {phase.shape[0]} != configured {encoder_cfg.input_side}"
            )
        patch = InterferogramPatch(phase=phase, meta=PatchMeta(source_id=entry.path))
        patches.append(render_channels(patch, encoder_cfg.input_channels))
        labels.append(entry.label)
    return patches, labels


def stack_channels(patches: list[InterferogramPatch]) -> np.ndarray:
    return np.stack([p.channels for p in patches])


class _TrainLogger:
    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch()

    def write(self, record: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _adam(params, lr: float, weight_decay: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, weight_decay=weight_decay)


def _rng_states(**rngs: np.random.Generator) -> dict:
    return {name: rng.bit_generator.state for name, rng in rngs.items()}


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _save_stage_checkpoint(
    path: Path,
    stage: str,
    model: EncoderModel,
    optim: torch.optim.Optimizer,
    state: TrainState,
    configs: dict,
    rng: dict,
) -> Path:
    tensors = model_tensors(model)
    opt_tensors, opt_meta = optimizer_tensors(optim)
    tensors.update(opt_tensors)
    tensors["rng/torch_cpu"] = torch_rng_tensor()
    ckpt = Checkpoint(
        stage=stage,
        encoder_config=model.config,
        state=state,
        tensors=tensors,
        optimizer_meta=opt_meta,
        rng=rng,
        configs=configs,
    )
    save_checkpoint(ckpt, path)
    return path


def _restore_into(model: EncoderModel, optim: torch.optim.Optimizer, ckpt: Checkpoint) -> None:
    load_model_tensors(model, ckpt.tensors)
    if ckpt.optimizer_meta and any(k.startswith("optim/") for k in ckpt.tensors):
        load_optimizer_tensors(optim, ckpt.tensors, ckpt.optimizer_meta)
    if "rng/torch_cpu" in ckpt.tensors:
        restore_torch_rng(ckpt.tensors["rng/torch_cpu"])


def pretrain(
    manifest: DatasetManifest,
    encoder_cfg: EncoderConfig,
    aug_cfg: AugmentationConfig,
    loss_cfg: LossConfig,
    cfg: PretrainConfig,
    run_dir: str | Path,
    resume_ckpt: Checkpoint | None = None,
) -> Path:
    """Self-supervised stage; returns the final ``pretrained`` checkpoint path."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    patches, _ = load_split(manifest, "train", encoder_cfg)
    if not patches:
        raise ConfigurationError("pretraining needs a non-empty train split")
    aug_cfg.validate(encoder_cfg.input_side)

    if resume_ckpt is None:
        model = build_model(encoder_cfg, seed=cfg.seed)
        optim = _adam(
            list(model.backbone.parameters()) + list(model.projection.parameters()),
            cfg.learning_rate,
            cfg.weight_decay,
        )
        seq = np.random.SeedSequence(cfg.seed)
        data_child, aug_child = seq.spawn(2)
        data_rng = np.random.default_rng(data_child)
        aug_rng = np.random.default_rng(aug_child)
        state = TrainState()
    else:
        model = build_model(resume_ckpt.encoder_config, seed=cfg.seed)
        optim = _adam(
            list(model.backbone.parameters()) + list(model.projection.parameters()),
            cfg.learning_rate,
            cfg.weight_decay,
        )
        _restore_into(model, optim, resume_ckpt)
        data_rng = _restore_rng(resume_ckpt.rng["numpy_data"])
        aug_rng = _restore_rng(resume_ckpt.rng["numpy_aug"])
        state = resume_ckpt.state

    logger = _TrainLogger(run_dir / "train_log.jsonl")
    configs = {
        "pretrain": dataclasses.asdict(cfg),
        "loss": dataclasses.asdict(loss_cfg),
        "augment": dataclasses.asdict(aug_cfg),
    }
    n = len(patches)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    model.train()

    final = run_dir / "pretrained-final.fckp"
    last_transcripts: list[dict] = []
    for epoch in range(state.epoch, cfg.epochs):
        order = data_rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if len(idx) < 2:
                continue  # a lone leftover patch has no negatives
            views = []
            last_transcripts = []
            for i in idx:
                pair = make_pair(patches[i], aug_cfg, aug_rng)
                views.append(pair.view_i)
                views.append(pair.view_j)
                last_transcripts.append(
                    {
                        "source": patches[i].meta.source_id,
                        "view_i": pair.transcript_i,
                        "view_j": pair.transcript_j,
                    }
                )
            x = torch.from_numpy(np.stack(views))
            z = model.projection(model.backbone(x))
            report = ntxent_batch(z, loss_cfg)
            optim.zero_grad()
            report.total.backward()
            optim.step()
            state.step += 1
            logger.write(
                {
                    "stage": "pretrain",
                    "epoch": epoch,
                    "step": state.step,
                    "loss": float(report.total.detach()),
                    "lr": cfg.learning_rate,
                    "batch_size": cfg.batch_size,
                    "seed": cfg.seed,
                }
            )
        state.epoch = epoch + 1
        # last batch's transcripts ride along for replay debugging
        configs["last_batch_transcripts"] = last_transcripts
        rng = _rng_states(numpy_data=data_rng, numpy_aug=aug_rng)
        _save_stage_checkpoint(
            run_dir / f"pretrained-epoch{epoch + 1:03d}.fckp",
            "pretrained", model, optim, state, configs, rng,
        )
    configs["last_batch_transcripts"] = last_transcripts
    rng = _rng_states(numpy_data=data_rng, numpy_aug=aug_rng)
    _save_stage_checkpoint(final, "pretrained", model, optim, state, configs, rng)
    return final


def _freeze_for(model: EncoderModel, unfreeze: str) -> list[torch.nn.Parameter]:
    model.requires_grad_(False)
    model.classifier.requires_grad_(True)
    # Frozen stages stay in eval mode so BatchNorm buffers are untouched.
    model.eval()
    if unfreeze == "head_plus_late_blocks":
        for stage in model.backbone.late_stages():
            stage.requires_grad_(True)
            stage.train()
    return [p for p in model.parameters() if p.requires_grad]


def finetune(
    source: Checkpoint | str | Path,
    manifest: DatasetManifest,
    cfg: FinetuneConfig,
    run_dir: str | Path,
    _resume: bool = False,
) -> Path:
    """Supervised stage on a pretrained checkpoint; returns the final path."""
    ckpt = source if isinstance(source, Checkpoint) else load_checkpoint(source)
    expected_stage = "finetuned" if _resume else "pretrained"
    if ckpt.stage != expected_stage:
        raise ValidationError(f"expected a {expected_stage} checkpoint, got stage {ckpt.stage!r}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    encoder_cfg = ckpt.encoder_config

    patches, raw_labels = load_split(manifest, "train", encoder_cfg)
    keep = [i for i, lab in enumerate(raw_labels) if lab is not None]
    if not keep:
        raise ConfigurationError("fine-tuning needs labeled train entries")
    channels = stack_channels([patches[i] for i in keep])
    labels = np.array([raw_labels[i] for i in keep], dtype=np.int64)
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise ConfigurationError("both classes must be present in the train split")

    val_channels = val_labels = None
    val_entries = [e for e in manifest.split_entries("test") if e.label is not None]
    if val_entries:
        val_patches, val_raw = load_split(manifest, "test", encoder_cfg)
        keep_val = [i for i, lab in enumerate(val_raw) if lab is not None]
        val_channels = stack_channels([val_patches[i] for i in keep_val])
        val_labels = np.array([val_raw[i] for i in keep_val], dtype=np.int64)

    model = build_model(encoder_cfg, seed=cfg.seed)
    trainable = _freeze_for(model, cfg.unfreeze)
    optim = _adam(trainable, cfg.learning_rate, cfg.weight_decay)
    if _resume:
        _restore_into(model, optim, ckpt)
        sampler_rng = _restore_rng(ckpt.rng["numpy_sampler"])
        state = ckpt.state
    else:
        load_model_tensors(model, ckpt.tensors)
        sampler_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        state = TrainState()

    logger = _TrainLogger(run_dir / "train_log.jsonl")
    configs = {"finetune": dataclasses.asdict(cfg), "encoder": dataclasses.asdict(encoder_cfg)}
    n = len(labels)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    if cfg.sampler == "balanced":
        batches = balanced_batches(labels, cfg.batch_size, sampler_rng)
    else:
        batches = sequential_batches(n, cfg.batch_size, sampler_rng)

    head_only = cfg.unfreeze == "head_only"
    final = run_dir / "finetuned-final.fckp"
    for epoch in range(state.epoch, cfg.epochs):
        for _ in range(steps_per_epoch):
            idx = next(batches)
            x = torch.from_numpy(channels[idx])
            y = torch.from_numpy(labels[idx])
            if head_only:
                with torch.no_grad():
                    h = model.backbone(x)
                logits = model.classifier(h)
            else:
                logits = model.classifier(model.backbone(x))
            loss = F.cross_entropy(logits, y)
            optim.zero_grad()
            loss.backward()
            optim.step()
            state.step += 1
            logger.write(
                {
                    "stage": "finetune",
                    "epoch": epoch,
                    "step": state.step,
                    "loss": float(loss.detach()),
                    "lr": cfg.learning_rate,
                    "batch_size": cfg.batch_size,
                    "seed": cfg.seed,
                }
            )
        state.epoch = epoch + 1
        rng = _rng_states(numpy_sampler=sampler_rng)
        if val_channels is not None:
            acc = _accuracy(model, val_channels, val_labels)
            _freeze_for(model, cfg.unfreeze)  # restore the mixed train/eval modes
            if state.best_metric is None or acc > state.best_metric:
                state.best_metric = acc
                state.best_epoch = state.epoch
                _save_stage_checkpoint(
                    run_dir / "finetuned-best.fckp", "finetuned", model, optim, state, configs, rng
                )
        _save_stage_checkpoint(
            run_dir / f"finetuned-epoch{epoch + 1:03d}.fckp",
            "finetuned", model, optim, state, configs, rng,
        )
    rng = _rng_states(numpy_sampler=sampler_rng)
    _save_stage_checkpoint(final, "finetuned", model, optim, state, configs, rng)
    return final


def _accuracy(model: EncoderModel, channels: np.ndarray, labels: np.ndarray) -> float:
    """Validation accuracy; leaves the model in eval mode (callers restore)."""
    model.eval()
    with torch.no_grad():
        correct = 0
        for start in range(0, len(labels), 256):
            x = torch.from_numpy(channels[start : start + 256])
            preds = predict_labels(model.classifier(model.backbone(x)))
            correct += int((preds.numpy() == labels[start : start + 256]).sum())
    return correct / len(labels)


def resume(
    source: str | Path,
    manifest: DatasetManifest,
    cfg: PretrainConfig | FinetuneConfig,
    run_dir: str | Path,
) -> Path:
    """Continue an interrupted stage from its last epoch-boundary checkpoint.

    The checkpoint stage must match the config type; a run whose epochs are
    already complete returns the checkpoint path unchanged.
    """
    ckpt = load_checkpoint(source)
    if isinstance(cfg, PretrainConfig):
        if ckpt.stage != "pretrained":
            raise ValidationError(f"cannot resume pretraining from a {ckpt.stage!r} checkpoint")
        if ckpt.state.epoch >= cfg.epochs:
            return Path(source)
        aug_cfg = AugmentationConfig(**ckpt.configs["augment"])
        loss_cfg = LossConfig(**ckpt.configs["loss"])
        return pretrain(manifest, ckpt.encoder_config, aug_cfg, loss_cfg, cfg, run_dir, resume_ckpt=ckpt)
    if ckpt.stage != "finetuned":
        raise ValidationError(f"cannot resume fine-tuning from a {ckpt.stage!r} checkpoint")
    if ckpt.state.epoch >= cfg.epochs:
        return Path(source)
    return finetune(ckpt, manifest, cfg, run_dir, _resume=True)
