import numpy as np
import pytest
import torch

from fringefinder.encoder import (
    ClassifierHead,
    EncoderConfig,
    ProjectionHead,
    build_model,
    cam,
    classify,
    encode,
    predict_labels,
    project,
)
from fringefinder.errors import ValidationError


def tiny_model(seed=0, **kwargs):
    return build_model(EncoderConfig(**kwargs), seed=seed)


def random_batch(n, channels=3, side=32, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(n, channels, side, side)).astype(np.float32)


class TestEncode:
    def test_single_item_shape(self):
        model = tiny_model()
        h = encode(model, random_batch(1))
        assert tuple(h.shape) == (1, 64)

    def test_identical_inputs_identical_rows(self):
        model = tiny_model()
        x = random_batch(1, seed=3)
        batch = np.concatenate([x, x])
        h = encode(model, batch)
        assert torch.equal(h[0], h[1])

    def test_finite_after_random_init(self):
        model = tiny_model(seed=11)
        h = encode(model, random_batch(16, seed=5))
        assert torch.all(torch.isfinite(h))

    def test_shape_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValidationError):
            encode(model, random_batch(2, side=16))
        with pytest.raises(ValidationError):
            encode(model, random_batch(2, channels=1))

    def test_encode_is_deterministic_across_calls(self):
        model = tiny_model()
        x = random_batch(4, seed=9)
        assert torch.equal(encode(model, x), encode(model, x))

    @pytest.mark.parametrize(
        "backbone,side,dim",
        [("resnet18", 64, 512), ("resnet34", 64, 512), ("resnet50", 64, 2048)],
    )
    def test_resnet_shape_contracts(self, backbone, side, dim):
        model = build_model(
            EncoderConfig(backbone=backbone, input_side=side, input_channels=3), seed=0
        )
        h = encode(model, random_batch(2, side=side, seed=1))
        assert tuple(h.shape) == (2, dim)
        maps = model.feature_maps(torch.from_numpy(random_batch(1, side=side, seed=2)))
        assert maps.shape[1] == dim

    def test_single_channel_backbone(self):
        model = tiny_model(input_channels=1)
        h = encode(model, random_batch(2, channels=1))
        assert tuple(h.shape) == (2, 64)


class TestProject:
    def test_zero_input_zero_bias_gives_zero(self):
        head = ProjectionHead(8, 8, 4, bias=False)
        z = project(head, torch.zeros(3, 8))
        assert torch.all(z == 0.0)

    def test_identity_weights_pass_nonnegative_input(self):
        head = ProjectionHead(4, 4, 4, bias=True)
        with torch.no_grad():
            head.linear1.weight.copy_(torch.eye(4))
            head.linear1.bias.zero_()
            head.linear2.weight.copy_(torch.eye(4))
            head.linear2.bias.zero_()
        h = torch.tensor([[0.5, 1.0, 0.0, 2.0]])
        assert torch.allclose(project(head, h), h)

    def test_matches_hand_rolled_matmul_oracle(self):
        rng = np.random.default_rng(7)
        head = ProjectionHead(16, 12, 8).double()
        h = rng.normal(size=(5, 16))
        z = project(head, torch.from_numpy(h)).detach().numpy()
        w1 = head.linear1.weight.detach().numpy()
        b1 = head.linear1.bias.detach().numpy()
        w2 = head.linear2.weight.detach().numpy()
        b2 = head.linear2.bias.detach().numpy()
        hidden = np.maximum(h @ w1.T + b1, 0.0)
        expected = hidden @ w2.T + b2
        rel = np.abs(z - expected).max() / max(np.abs(expected).max(), 1e-12)
        assert rel < 1e-5

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            project(ProjectionHead(8, 8, 4), torch.zeros(2, 7))

    def test_gradient_matches_finite_differences(self):
        # scalar test loss L = 0.5 * sum(z^2); analytic grads via autograd
        rng = np.random.default_rng(13)
        head = ProjectionHead(8, 8, 4).double()
        with torch.no_grad():
            for p in head.parameters():
                p.copy_(torch.from_numpy(rng.normal(scale=0.5, size=tuple(p.shape))))
        h = torch.from_numpy(rng.normal(size=(3, 8)))

        def loss_value() -> float:
            with torch.no_grad():
                return float(0.5 * (head(h) ** 2).sum())

        head.zero_grad()
        (0.5 * (head(h) ** 2).sum()).backward()
        step = 1e-6
        for param in (head.linear1.weight, head.linear2.weight, head.linear1.bias, head.linear2.bias):
            analytic = param.grad.numpy().copy()
            numeric = np.zeros_like(analytic)
            flat = param.data.view(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + step
                fp = loss_value()
                flat[i] = original - step
                fm = loss_value()
                flat[i] = original
                numeric.flat[i] = (fp - fm) / (2.0 * step)
            rel = np.linalg.norm(analytic - numeric) / max(
                np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12
            )
            assert rel < 1e-4


class TestClassify:
    def test_zero_head_predicts_zero(self):
        head = ClassifierHead(8)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.zero_()
        logits = classify(head, torch.ones(3, 8))
        assert torch.all(logits == 0.0)
        assert predict_labels(logits).tolist() == [0, 0, 0]  # ties break toward 0

    def test_argmax(self):
        logits = torch.tensor([[0.3, 0.9], [0.9, 0.3], [0.5, 0.5]])
        assert predict_labels(logits).tolist() == [1, 0, 0]

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            classify(ClassifierHead(8), torch.zeros(2, 9))


class TestCam:
    def test_zero_weights_give_zero_map(self):
        model = tiny_model()
        with torch.no_grad():
            model.classifier.linear.weight.zero_()
            model.classifier.linear.bias.zero_()
        out = cam(model, random_batch(1)[0], 1)
        assert out.shape == (32, 32)
        assert np.all(out == 0.0)

    def test_single_feature_map_equals_normalized_upsampled_map(self):
        model = tiny_model(representation_dim=1)
        with torch.no_grad():
            model.classifier.linear.weight.fill_(1.0)
        model.eval()  # cam() runs the backbone in eval mode
        x = random_batch(1, seed=21)[0]
        with torch.no_grad():
            maps = model.feature_maps(torch.from_numpy(x).unsqueeze(0))[0]
        assert maps.shape[0] == 1
        up = torch.nn.functional.interpolate(
            torch.relu(maps)[None], size=(32, 32), mode="bilinear", align_corners=False
        )[0, 0].numpy()
        expected = (up - up.min()) / (up.max() - up.min())
        assert np.allclose(cam(model, x, 1), expected, atol=1e-6)

    def test_range_and_max_invariant(self):
        model = tiny_model(seed=3)
        out = cam(model, random_batch(1, seed=8)[0], 1)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.max() == pytest.approx(1.0)  # non-constant map normalizes to max 1

    def test_bad_class_rejected(self):
        model = tiny_model()
        with pytest.raises(ValidationError):
            cam(model, random_batch(1)[0], 2)


class TestConfig:
    def test_fixed_resnet_width_enforced(self):
        with pytest.raises(ValidationError):
            EncoderConfig(backbone="resnet18", representation_dim=64)

    def test_unknown_backbone_rejected(self):
        with pytest.raises(ValidationError):
            EncoderConfig(backbone="vit")

    def test_seeded_build_is_reproducible(self):
        a = tiny_model(seed=5)
        b = tiny_model(seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
