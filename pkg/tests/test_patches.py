import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fringefinder.data import (
    InterferogramPatch,
    LabeledPatch,
    PatchMeta,
    bullseye_field,
    image_to_phase,
    read_patch_file,
    render_channels,
    wrap_phase,
    write_patch_file,
)
from fringefinder.errors import ValidationError

TWO_PI = 2.0 * np.pi


def circular_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % TWO_PI
    return np.minimum(d, TWO_PI - d)


@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_wrap_range_and_period(value):
    w = wrap_phase(value)
    assert -np.pi <= w < np.pi
    # cyclic identity holds in the circular metric (seam-straddling inputs
    # may land on either end of the interval)
    assert circular_distance(w, wrap_phase(value + TWO_PI)) < 1e-9


def test_wrap_elementwise_array():
    rng = np.random.default_rng(0)
    field = rng.uniform(-40.0, 40.0, size=(16, 16))
    w = wrap_phase(field)
    assert w.shape == field.shape
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    assert np.all(circular_distance(w, wrap_phase(field + TWO_PI)) < 1e-9)


def test_wrap_boundary_guard():
    # inputs a hair below the seam must not escape the interval
    assert wrap_phase(-1e-18 - np.pi) < np.pi
    assert wrap_phase(np.pi) == -np.pi


class TestPatchInvariants:
    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            InterferogramPatch(phase=np.zeros((8, 9)))

    def test_rejects_small_side(self):
        with pytest.raises(ValidationError):
            InterferogramPatch(phase=np.zeros((4, 4)))

    def test_rejects_out_of_range_phase(self):
        bad = np.zeros((8, 8))
        bad[0, 0] = np.pi  # pi itself is excluded
        with pytest.raises(ValidationError):
            InterferogramPatch(phase=bad)

    def test_label_domain(self):
        patch = InterferogramPatch(phase=np.zeros((8, 8)))
        LabeledPatch(patch=patch, label=1)
        with pytest.raises(ValidationError):
            LabeledPatch(patch=patch, label=2)

    def test_meta_domains(self):
        PatchMeta(geometry="ascending", filtered="goldstein", overlay="phase_only")
        with pytest.raises(ValidationError):
            PatchMeta(geometry="sideways")


class TestRenderChannels:
    def test_constant_phase_gives_constant_channels(self):
        patch = InterferogramPatch(phase=np.zeros((16, 16)))
        rendered = render_channels(patch)
        assert rendered.channels.shape == (3, 16, 16)
        for plane in rendered.channels:
            assert np.all(plane == plane[0, 0])

    def test_cyclic_inputs_render_identically(self):
        rng = np.random.default_rng(1)
        raw = rng.uniform(-3.0, 3.0, size=(16, 16))
        a = render_channels(InterferogramPatch(phase=wrap_phase(raw)))
        b = render_channels(InterferogramPatch(phase=wrap_phase(raw + TWO_PI)))
        assert np.allclose(a.channels, b.channels, atol=1e-6)

    def test_single_channel_mode(self):
        patch = InterferogramPatch(phase=np.full((16, 16), -np.pi / 2))
        rendered = render_channels(patch, n_channels=1)
        assert rendered.channels.shape == (1, 16, 16)
        assert np.allclose(rendered.channels, 0.25, atol=1e-6)

    def test_range_invariant(self):
        rng = np.random.default_rng(2)
        patch = InterferogramPatch(phase=wrap_phase(rng.uniform(-9, 9, size=(32, 32))))
        rendered = render_channels(patch)
        assert rendered.channels.min() >= 0.0 and rendered.channels.max() <= 1.0

    def test_one_cycle_bullseye_renders_one_closed_ring(self):
        # Brute-force oracle: along each of 8 radial directions from the
        # center, the centered cosine plane changes sign exactly twice
        # (entering and leaving the single dark ring).
        side, cycles, sigma = 32, 1.0, 6.0
        center = (16.0, 16.0)
        phase = wrap_phase(bullseye_field(side, center, cycles, sigma))
        cos_plane = render_channels(InterferogramPatch(phase=phase)).channels[0]
        for dr, dc in [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)]:
            values = []
            r, c = center
            while 0 <= int(round(r)) < side and 0 <= int(round(c)) < side:
                values.append(cos_plane[int(round(r)), int(round(c))] - 0.5)
                r, c = r + dr, c + dc
            signs = np.sign([v for v in values if abs(v) > 1e-6])
            changes = int(np.sum(signs[1:] != signs[:-1]))
            assert changes == 2, f"direction ({dr},{dc}) crossed {changes} times"

    def test_rejects_unwrapped_phase(self):
        patch = InterferogramPatch(phase=np.zeros((8, 8)))
        patch.phase[0, 0] = 7.0  # mutate past construction-time validation
        with pytest.raises(ValidationError):
            render_channels(patch)


class TestPatchFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        phase = wrap_phase(rng.uniform(-20, 20, size=(32, 32)))
        path = tmp_path / "p.iph"
        write_patch_file(path, phase)
        back = read_patch_file(path)
        assert back.shape == (32, 32)
        assert np.all(back >= -np.pi) and np.all(back < np.pi)
        assert np.allclose(back, phase, atol=1e-6)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.iph"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValidationError):
            read_patch_file(path)

    def test_rejects_truncated_payload(self, tmp_path):
        phase = np.zeros((8, 8))
        path = tmp_path / "t.iph"
        write_patch_file(path, phase)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValidationError):
            read_patch_file(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            read_patch_file(tmp_path / "absent.iph")

    def test_image_conversion(self, tmp_path):
        from PIL import Image

        gray = np.arange(256, dtype=np.uint8).reshape(16, 16)
        img_path = tmp_path / "g.png"
        Image.fromarray(gray, mode="L").save(img_path)
        phase = image_to_phase(img_path)
        assert phase.shape == (16, 16)
        assert phase.min() == -np.pi  # gray 0
        assert phase.max() < np.pi  # gray 255 stays inside the interval
        assert np.isclose(phase[0, 0], -np.pi)
        assert np.isclose(phase.flat[128], 0.0)  # gray 128 -> phase 0
