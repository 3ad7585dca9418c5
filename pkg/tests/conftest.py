import dataclasses
import time
from pathlib import Path

import pytest

from fringefinder.augment import AugmentationConfig
from fringefinder.contrast import LossConfig
from fringefinder.data import SyntheticFringeSpec, load_manifest, write_synthetic_dataset
from fringefinder.encoder import EncoderConfig
from fringefinder.train import FinetuneConfig, PretrainConfig, finetune, pretrain

DESK_TRAIN_SPEC = SyntheticFringeSpec(n_samples=512, side=32, deformation_fraction=0.5, seed=7)
DESK_TEST_SPEC = SyntheticFringeSpec(n_samples=128, side=32, deformation_fraction=0.5, seed=8)
DESK_PRETRAIN = PretrainConfig(epochs=10, batch_size=16, seed=0)
DESK_FINETUNE = FinetuneConfig(epochs=3, batch_size=32, seed=0)
DESK_CAM_FINETUNE = FinetuneConfig(
    epochs=3, batch_size=32, learning_rate=1e-3, unfreeze="head_plus_late_blocks", seed=0
)


@dataclasses.dataclass
class DeskRun:
    """One full desk-scale pipeline run shared across the test session."""

    base: Path
    manifest_path: Path
    pretrained: Path
    finetuned: Path
    cam_finetuned: Path
    train_spec: SyntheticFringeSpec
    test_spec: SyntheticFringeSpec
    elapsed_seconds: float

    @property
    def manifest(self):
        return load_manifest(self.manifest_path)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> DeskRun:
    base = tmp_path_factory.mktemp("desk")
    start = time.monotonic()
    manifest_path = write_synthetic_dataset(base / "data", DESK_TRAIN_SPEC, DESK_TEST_SPEC)
    manifest = load_manifest(manifest_path)
    pre = pretrain(
        manifest, EncoderConfig(), AugmentationConfig(), LossConfig(), DESK_PRETRAIN, base / "pre"
    )
    fin = finetune(pre, manifest, DESK_FINETUNE, base / "fin")
    elapsed = time.monotonic() - start
    cam_fin = finetune(pre, manifest, DESK_CAM_FINETUNE, base / "fin-cam")
    return DeskRun(
        base=base,
        manifest_path=manifest_path,
        pretrained=pre,
        finetuned=fin,
        cam_finetuned=cam_fin,
        train_spec=DESK_TRAIN_SPEC,
        test_spec=DESK_TEST_SPEC,
        elapsed_seconds=elapsed,
    )
