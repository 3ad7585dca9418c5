import json

import numpy as np
import pytest

from fringefinder.augment import AugmentationConfig
from fringefinder.checkpoint import load_checkpoint
from fringefinder.contrast import LossConfig
from fringefinder.data import SyntheticFringeSpec, load_manifest, write_synthetic_dataset
from fringefinder.encoder import EncoderConfig, build_model
from fringefinder.errors import ConfigurationError, ValidationError
from fringefinder.train import FinetuneConfig, PretrainConfig, finetune, pretrain, resume

PRE = dict(epochs=2, batch_size=8, seed=0)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    base = tmp_path_factory.mktemp("traindata")
    manifest_path = write_synthetic_dataset(
        base,
        SyntheticFringeSpec(n_samples=48, deformation_fraction=0.5, seed=100),
        SyntheticFringeSpec(n_samples=16, deformation_fraction=0.5, seed=101),
    )
    return manifest_path


@pytest.fixture(scope="module")
def small_pretrained(small_data, tmp_path_factory):
    run = tmp_path_factory.mktemp("prerun")
    return pretrain(
        load_manifest(small_data),
        EncoderConfig(),
        AugmentationConfig(),
        LossConfig(),
        PretrainConfig(**PRE),
        run,
    )


def read_log(run_dir):
    return [json.loads(line) for line in (run_dir / "train_log.jsonl").read_text().splitlines()]


class TestPretrain:
    def test_zero_epochs_checkpoint_equals_initialization(self, small_data, tmp_path):
        manifest = load_manifest(small_data)
        cfg = PretrainConfig(epochs=0, batch_size=8, seed=4)
        path = pretrain(manifest, EncoderConfig(), AugmentationConfig(), LossConfig(), cfg, tmp_path)
        ckpt = load_checkpoint(path)
        reference = build_model(EncoderConfig(), seed=4)
        for name, tensor in reference.state_dict().items():
            assert np.array_equal(ckpt.tensors[f"model/{name}"], tensor.numpy()), name
        assert read_log(tmp_path) == []
        assert ckpt.state.epoch == 0 and ckpt.state.step == 0

    def test_seeded_runs_are_bit_identical(self, small_data, tmp_path):
        manifest = load_manifest(small_data)
        paths = []
        for sub in ("a", "b"):
            run = tmp_path / sub
            paths.append(
                pretrain(
                    manifest, EncoderConfig(), AugmentationConfig(), LossConfig(),
                    PretrainConfig(**PRE), run,
                )
            )
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_log_records_have_contract_fields(self, small_data, tmp_path):
        manifest = load_manifest(small_data)
        pretrain(
            manifest, EncoderConfig(), AugmentationConfig(), LossConfig(),
            PretrainConfig(epochs=1, batch_size=8, seed=1), tmp_path,
        )
        records = read_log(tmp_path)
        assert len(records) == 6  # ceil(48 / 8)
        for rec in records:
            assert set(rec) == {"stage", "epoch", "step", "loss", "lr", "batch_size", "seed"}
            assert rec["stage"] == "pretrain"

    def test_empty_train_split_rejected(self, tmp_path):
        manifest_path = write_synthetic_dataset(
            tmp_path, SyntheticFringeSpec(n_samples=4, seed=0)
        )
        manifest = load_manifest(manifest_path)
        for entry in manifest.entries:
            entry.split = "test"
        with pytest.raises(ConfigurationError):
            pretrain(
                manifest, EncoderConfig(), AugmentationConfig(), LossConfig(),
                PretrainConfig(epochs=1, batch_size=8, seed=0), tmp_path / "run",
            )

    def test_contrastive_batch_needs_two(self):
        with pytest.raises(ConfigurationError):
            PretrainConfig(epochs=1, batch_size=1, seed=0)


class TestFinetune:
    def test_head_only_keeps_encoder_bit_identical(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        before = load_checkpoint(small_pretrained)
        fin = finetune(small_pretrained, manifest, FinetuneConfig(epochs=2, batch_size=8, seed=0), tmp_path)
        after = load_checkpoint(fin)
        changed = []
        for name in before.tensors:
            if not name.startswith("model/"):
                continue
            same = np.array_equal(before.tensors[name], after.tensors[name])
            if not same:
                changed.append(name)
            if "classifier" not in name:
                assert same, f"frozen tensor {name} changed"
        assert changed, "classifier tensors trained"
        assert all("classifier" in name for name in changed)

    def test_late_block_unfreeze_trains_last_stages_only(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        cfg = FinetuneConfig(epochs=1, batch_size=8, unfreeze="head_plus_late_blocks", seed=0)
        before = load_checkpoint(small_pretrained)
        after = load_checkpoint(finetune(small_pretrained, manifest, cfg, tmp_path))
        # early blocks frozen; late blocks and classifier may move
        for name in before.tensors:
            if name.startswith(("model/backbone.blocks.0", "model/backbone.blocks.1")):
                assert np.array_equal(before.tensors[name], after.tensors[name]), name
        moved = [
            name
            for name in before.tensors
            if name.startswith("model/backbone.blocks.3")
            and not np.array_equal(before.tensors[name], after.tensors[name])
        ]
        assert moved

    def test_zero_learning_rate_changes_nothing(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        cfg = FinetuneConfig(epochs=2, batch_size=64, learning_rate=0.0, sampler="sequential", seed=0)
        before = load_checkpoint(small_pretrained)
        after = load_checkpoint(finetune(small_pretrained, manifest, cfg, tmp_path))
        for name in before.tensors:
            if name.startswith("model/"):
                assert np.array_equal(before.tensors[name], after.tensors[name]), name
        # batch = the whole train split each step, so the loss is constant
        losses = [rec["loss"] for rec in read_log(tmp_path)]
        assert len(losses) == 2
        assert np.allclose(losses, losses[0], atol=1e-6)

    def test_requires_pretrained_stage(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        fin = finetune(small_pretrained, manifest, FinetuneConfig(epochs=1, batch_size=8, seed=0), tmp_path / "a")
        with pytest.raises(ValidationError):
            finetune(fin, manifest, FinetuneConfig(epochs=1, batch_size=8, seed=0), tmp_path / "b")

    def test_missing_class_rejected(self, small_pretrained, tmp_path):
        manifest_path = write_synthetic_dataset(
            tmp_path, SyntheticFringeSpec(n_samples=8, deformation_fraction=0.0, seed=1)
        )
        with pytest.raises(ConfigurationError):
            finetune(
                small_pretrained, load_manifest(manifest_path),
                FinetuneConfig(epochs=1, batch_size=4, seed=0), tmp_path / "run",
            )

    def test_seeded_finetune_reproducible(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        cfg = FinetuneConfig(epochs=1, batch_size=8, seed=3)
        a = finetune(small_pretrained, manifest, cfg, tmp_path / "a")
        b = finetune(small_pretrained, manifest, cfg, tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()


class TestTranscriptMetadata:
    def test_checkpoint_carries_replayable_transcripts(self, small_data, small_pretrained):
        from fringefinder.augment import replay_transcript
        from fringefinder.encoder import EncoderConfig
        from fringefinder.train import load_split

        ckpt = load_checkpoint(small_pretrained)
        transcripts = ckpt.configs["last_batch_transcripts"]
        assert transcripts, "last pretraining batch recorded"
        manifest = load_manifest(small_data)
        patches, _ = load_split(manifest, "train", EncoderConfig())
        by_id = {p.meta.source_id: p for p in patches}
        entry = transcripts[0]
        patch = by_id[entry["source"]]
        once = replay_transcript(patch.channels, entry["view_i"])
        twice = replay_transcript(patch.channels, entry["view_i"])
        assert once.shape == patch.channels.shape
        assert np.array_equal(once, twice)


class TestDeskRunStatistics:
    def test_pretraining_loss_descends(self, desk_run):
        # trailing 50-step mean strictly below the first 50-step mean
        records = [
            json.loads(line)
            for line in (desk_run.base / "pre" / "train_log.jsonl").read_text().splitlines()
        ]
        losses = [rec["loss"] for rec in records]
        assert len(losses) >= 100
        assert np.mean(losses[-50:]) < np.mean(losses[:50])


class TestResume:
    def test_resume_matches_uninterrupted_run(self, small_data, tmp_path):
        manifest = load_manifest(small_data)
        full_cfg = PretrainConfig(epochs=4, batch_size=8, seed=9)
        full = pretrain(manifest, EncoderConfig(), AugmentationConfig(), LossConfig(), full_cfg, tmp_path / "full")

        half_cfg = PretrainConfig(epochs=2, batch_size=8, seed=9)
        half = pretrain(manifest, EncoderConfig(), AugmentationConfig(), LossConfig(), half_cfg, tmp_path / "half")
        resumed = resume(half, manifest, full_cfg, tmp_path / "resumed")

        assert resumed.read_bytes() == full.read_bytes()

    def test_resume_with_completed_epochs_is_noop(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        before = small_pretrained.read_bytes()
        out = resume(small_pretrained, manifest, PretrainConfig(**PRE), tmp_path)
        assert out == small_pretrained
        assert small_pretrained.read_bytes() == before

    def test_resume_stage_mismatch(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        with pytest.raises(ValidationError):
            resume(small_pretrained, manifest, FinetuneConfig(epochs=3, batch_size=8, seed=0), tmp_path)

    def test_resume_finetune_continues(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        full = finetune(small_pretrained, manifest, FinetuneConfig(epochs=3, batch_size=8, seed=5), tmp_path / "full")
        short = finetune(small_pretrained, manifest, FinetuneConfig(epochs=1, batch_size=8, seed=5), tmp_path / "short")
        resumed = resume(short, manifest, FinetuneConfig(epochs=3, batch_size=8, seed=5), tmp_path / "resumed")
        assert resumed.read_bytes() == full.read_bytes()

    def test_resume_partial_unfreeze_matches_uninterrupted(self, small_data, small_pretrained, tmp_path):
        # late-block BatchNorm buffers must keep updating across the
        # validation passes and the resume boundary
        manifest = load_manifest(small_data)
        cfg3 = FinetuneConfig(epochs=3, batch_size=8, unfreeze="head_plus_late_blocks", seed=6)
        cfg1 = FinetuneConfig(epochs=1, batch_size=8, unfreeze="head_plus_late_blocks", seed=6)
        full = finetune(small_pretrained, manifest, cfg3, tmp_path / "full")
        short = finetune(small_pretrained, manifest, cfg1, tmp_path / "short")
        resumed = resume(short, manifest, cfg3, tmp_path / "resumed")
        assert resumed.read_bytes() == full.read_bytes()

    def test_late_block_bn_buffers_update_every_epoch(self, small_data, small_pretrained, tmp_path):
        manifest = load_manifest(small_data)
        cfg = FinetuneConfig(epochs=2, batch_size=8, unfreeze="head_plus_late_blocks", seed=7)
        finetune(small_pretrained, manifest, cfg, tmp_path)
        e1 = load_checkpoint(tmp_path / "finetuned-epoch001.fckp")
        e2 = load_checkpoint(tmp_path / "finetuned-epoch002.fckp")
        name = "model/backbone.blocks.3.1.running_mean"
        assert not np.array_equal(e1.tensors[name], e2.tensors[name])
