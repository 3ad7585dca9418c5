"""Linear-evaluation metrics, report files, and sequence monitoring.

Metrics follow the confusion-count identities with total ordering in the
degenerate cases: precision := 1 when TP+FP = 0, recall := 1 when
TP+FN = 0, F1 := 0 when P+R = 0. Predictions use the encoder module's
argmax rule (ties toward non-deformation). Sequence monitoring orders
patches by the trailing digits of their filename stems, emits one
prediction and one CAM image per timestep, and reports the first
timestep predicted positive (the potential alarm) plus the agreement
rate when expert labels are supplied.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, load_model_tensors
from .data.manifest import DatasetManifest, ManifestEntry
from .encoder import EncoderModel, build_model, cam, predict_labels
from .errors import ConfigurationError, ValidationError
from .train import load_split, stack_channels

DEGENERATE_PRECISION = 1.0
DEGENERATE_RECALL = 1.0
DEGENERATE_F1 = 0.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def accuracy_of(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ValidationError("cannot compute accuracy of zero samples")
    return (c.tp + c.tn) / c.total


def precision_of(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else DEGENERATE_PRECISION


def recall_of(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fn) if c.tp + c.fn else DEGENERATE_RECALL


def f1_of(c: ConfusionCounts) -> float:
    p, r = precision_of(c), recall_of(c)
    return 2.0 * p * r / (p + r) if p + r > 0 else DEGENERATE_F1


@dataclass
class SampleRecord:
    sample_id: str
    label: int
    prediction: int
    positive_logit: float


@dataclass
class EvaluationReport:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float
    records: list[SampleRecord] = field(default_factory=list)


def report_from_counts(counts: ConfusionCounts, records: list[SampleRecord] | None = None) -> EvaluationReport:
    return EvaluationReport(
        counts=counts,
        accuracy=accuracy_of(counts),
        precision=precision_of(counts),
        recall=recall_of(counts),
        f1=f1_of(counts),
        records=records or [],
    )


def load_eval_model(
    source: Checkpoint | str | Path, expected_stage: str = "finetuned"
) -> tuple[EncoderModel, Checkpoint]:
    """Rebuild a frozen model from a checkpoint, enforcing its stage tag."""
    ckpt = source if isinstance(source, Checkpoint) else load_checkpoint(source)
    if ckpt.stage != expected_stage:
        raise ValidationError(f"expected a {expected_stage} checkpoint, got stage {ckpt.stage!r}")
    model = build_model(ckpt.encoder_config, seed=0)
    load_model_tensors(model, ckpt.tensors)
    model.eval()
    return model, ckpt


def _predict(model: EncoderModel, channels: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    preds, pos_logits = [], []
    with torch.no_grad():
        for start in range(0, len(channels), batch_size):
            x = torch.from_numpy(channels[start : start + batch_size])
            logits = model.classifier(model.backbone(x))
            preds.append(predict_labels(logits).numpy())
            pos_logits.append(logits[:, 1].numpy())
    return np.concatenate(preds), np.concatenate(pos_logits)


def evaluate(
    source: Checkpoint | str | Path, manifest: DatasetManifest, batch_size: int = 256
) -> EvaluationReport:
    """Run the fine-tuned classifier over the manifest's labeled test split."""
    model, ckpt = load_eval_model(source)
    patches, raw_labels = load_split(manifest, "test", ckpt.encoder_config)
    keep = [i for i, lab in enumerate(raw_labels) if lab is not None]
    if not keep:
        raise ConfigurationError("evaluation needs a non-empty labeled test split")
    test_entries = manifest.split_entries("test")
    channels = stack_channels([patches[i] for i in keep])
    labels = np.array([raw_labels[i] for i in keep], dtype=np.int64)
    ids = [test_entries[i].path for i in keep]

    preds, pos_logits = _predict(model, channels, batch_size)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    records = [
        SampleRecord(ids[i], int(labels[i]), int(preds[i]), float(pos_logits[i]))
        for i in range(len(labels))
    ]
    return report_from_counts(ConfusionCounts(tp, fp, tn, fn), records)


def write_report(report: EvaluationReport, path: str | Path) -> None:
    """Structured text: one header object, then line-delimited sample records."""
    header = {
        "counts": {"tp": report.counts.tp, "fp": report.counts.fp, "tn": report.counts.tn, "fn": report.counts.fn},
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "degenerate_rules": "P:=1 if TP+FP=0; R:=1 if TP+FN=0; F1:=0 if P+R=0",
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in report.records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.sample_id,
                        "label": rec.label,
                        "prediction": rec.prediction,
                        "positive_logit": rec.positive_logit,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


_TRAILING_DIGITS = re.compile(r"(\d+)$")


def sequence_order_key(entry_path: str) -> int:
    """Chronological key: the trailing digit run of the filename stem."""
    stem = Path(entry_path).stem
    match = _TRAILING_DIGITS.search(stem)
    if match is None:
        raise ValidationError(f"{entry_path!r} has no trailing chronological key in its stem")
    return int(match.group(1))


@dataclass
class SequenceStep:
    order_key: int
    sample_id: str
    prediction: int
    positive_logit: float
    cam_path: str | None = None


@dataclass
class SequenceReport:
    steps: list[SequenceStep]
    first_alarm_index: int | None  # 1-based position in chronological order
    first_alarm_key: int | None
    agreement: float | None = None


def save_cam_png(cam_map: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    gray = np.round(np.clip(cam_map, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path)


def evaluate_sequence(
    source: Checkpoint | str | Path,
    manifest: DatasetManifest,
    expert_labels: list[int] | None = None,
    cam_dir: str | Path | None = None,
    cam_class: int | None = None,
) -> SequenceReport:
    """Classify a chronological patch sequence and emit per-step CAMs.

    ``cam_class`` of None maps each step with its predicted class.
    """
    model, ckpt = load_eval_model(source)
    entries = list(manifest.entries)
    if not entries:
        raise ConfigurationError("sequence evaluation needs a non-empty manifest")
    keyed: list[tuple[int, ManifestEntry]] = [(sequence_order_key(e.path), e) for e in entries]
    keyed.sort(key=lambda pair: pair[0])
    if expert_labels is not None and len(expert_labels) != len(keyed):
        raise ValidationError(
            f"expert labels length {len(expert_labels)} != sequence length {len(keyed)}"
        )

    ordered = DatasetManifest(
        entries=[ManifestEntry(e.path, e.label, "test") for _, e in keyed], root=manifest.root
    )
    patches, _ = load_split(ordered, "test", ckpt.encoder_config)
    channels = stack_channels(patches)
    preds, pos_logits = _predict(model, channels)

    if cam_dir is not None:
        cam_dir = Path(cam_dir)
        cam_dir.mkdir(parents=True, exist_ok=True)

    steps: list[SequenceStep] = []
    for i, (key, entry) in enumerate(keyed):
        cam_path = None
        if cam_dir is not None:
            cls = int(preds[i]) if cam_class is None else cam_class
            cam_path = str(cam_dir / f"{Path(entry.path).stem}_cam_{cls}.png")
            save_cam_png(cam(model, channels[i], cls), cam_path)
        steps.append(SequenceStep(key, entry.path, int(preds[i]), float(pos_logits[i]), cam_path))

    alarm_positions = [i for i, step in enumerate(steps) if step.prediction == 1]
    first_index = alarm_positions[0] + 1 if alarm_positions else None
    first_key = steps[alarm_positions[0]].order_key if alarm_positions else None
    agreement = None
    if expert_labels is not None:
        matches = sum(1 for step, exp in zip(steps, expert_labels) if step.prediction == int(exp))
        agreement = matches / len(steps)
    return SequenceReport(steps, first_index, first_key, agreement)


def write_sequence_report(report: SequenceReport, path: str | Path) -> None:
    header = {
        "first_alarm_index": report.first_alarm_index,
        "first_alarm_key": report.first_alarm_key,
    }
    if report.agreement is not None:
        header["agreement"] = report.agreement
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for step in report.steps:
            fh.write(
                json.dumps(
                    {
                        "order_key": step.order_key,
                        "id": step.sample_id,
                        "prediction": step.prediction,
                        "positive_logit": step.positive_logit,
                        "cam": step.cam_path,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
