import numpy as np
import pytest

from mavsr.errors import DegenerateMotion, DimensionMismatch, UnsupportedFormat
from mavsr.similarity import MotionParams
from mavsr.video_io import (
    GRAY8,
    RGB8,
    Frame,
    FrameSequence,
    SynthSpec,
    load_frame_sequence,
    make_texture,
    sample_bilinear,
    save_image_dir,
    save_raw_stream,
    synth_video,
    to_grayscale,
    warp_image,
)


def gray_frame(h=16, w=16, value=128):
    return Frame.from_array(np.full((h, w), value, dtype=np.uint8))


class TestFrame:
    def test_pixels_view_shape(self):
        f = Frame.from_array(np.arange(256, dtype=np.uint8).reshape(16, 16))
        assert f.pixels().shape == (16, 16)
        assert f.format == GRAY8

    def test_rgb_shape(self):
        f = Frame.from_array(np.zeros((16, 16, 3), dtype=np.uint8))
        assert f.format == RGB8
        assert f.channels == 3

    def test_too_small_rejected(self):
        with pytest.raises(DimensionMismatch):
            Frame(width=4, height=4, format=GRAY8, data=b"\0" * 16)

    def test_wrong_buffer_length_rejected(self):
        with pytest.raises(DimensionMismatch):
            Frame(width=16, height=16, format=GRAY8, data=b"\0" * 100)

    def test_unknown_format_rejected(self):
        with pytest.raises(UnsupportedFormat):
            Frame(width=16, height=16, format="yuv", data=b"\0" * 256)


class TestFrameSequence:
    def test_mixed_sizes_rejected(self):
        with pytest.raises(DimensionMismatch):
            FrameSequence(frames=[gray_frame(16, 16), gray_frame(16, 32)])

    def test_empty_rejected(self):
        with pytest.raises(DimensionMismatch):
            FrameSequence(frames=[])


def test_grayscale_luma_oracle():
    """BT.601 weights, rounding half up, checked against an explicit loop."""
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    g = to_grayscale(Frame.from_array(rgb)).pixels()
    for y in range(8):
        for x in range(8):
            r, gg, b = (float(v) for v in rgb[y, x])
            expect = int(np.floor(0.299 * r + 0.587 * gg + 0.114 * b + 0.5))
            assert g[y, x] == expect


def test_grayscale_passthrough_identity():
    f = gray_frame()
    assert to_grayscale(f) is f


def test_raw_stream_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    frames = [Frame.from_array(rng.integers(0, 256, (12, 10), dtype=np.uint8)) for _ in range(5)]
    seq = FrameSequence(frames=frames)
    path = tmp_path / "clip.raw"
    save_raw_stream(seq, path)
    loaded = load_frame_sequence(path)
    assert len(loaded) == 5
    for a, b in zip(seq.frames, loaded.frames):
        assert a.data == b.data


def test_raw_stream_header_checked(tmp_path):
    p = tmp_path / "bad.raw"
    p.write_bytes(b"10 10 3\n" + b"\0" * 10)
    with pytest.raises(DimensionMismatch):
        load_frame_sequence(p)


def test_image_dir_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    frames = [Frame.from_array(rng.integers(0, 256, (9, 11), dtype=np.uint8)) for _ in range(3)]
    seq = FrameSequence(frames=frames)
    save_image_dir(seq, tmp_path / "imgs")
    loaded = load_frame_sequence(tmp_path / "imgs")
    assert len(loaded) == 3
    for a, b in zip(seq.frames, loaded.frames):
        assert np.array_equal(a.pixels(), b.pixels())


def test_missing_input_raises(tmp_path):
    from mavsr.errors import MissingInput

    with pytest.raises(MissingInput):
        load_frame_sequence(tmp_path / "nope.raw")


class TestWarp:
    def test_integer_shift_matches_roll(self):
        """A whole-pixel translation is an exact shift away from the border."""
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 255, size=(32, 32))
        out = warp_image(img, MotionParams(tx=3.0, ty=-2.0))
        # pixel (y, x) samples input at (y + 2, x - 3)
        assert np.allclose(out[4:30, 4:28], img[6:32, 1:25])

    def test_identity_warp_exact(self):
        img = np.arange(64, dtype=np.float64).reshape(8, 8)
        assert np.array_equal(warp_image(img, MotionParams()), img)

    def test_bilinear_interpolates_midpoint(self):
        img = np.array([[0.0, 10.0], [20.0, 30.0]])
        v = sample_bilinear(img, np.array([[0.5]]), np.array([[0.5]]))
        assert v[0, 0] == pytest.approx(15.0)

    def test_rotation_preserves_center(self):
        img = np.zeros((17, 17))
        img[8, 8] = 100.0
        out = warp_image(img, MotionParams(theta=0.7))
        assert out[8, 8] == pytest.approx(100.0)


class TestTextures:
    @pytest.mark.parametrize("base", ["checker", "noise", "blobs"])
    def test_textures_deterministic_and_in_range(self, base):
        a = make_texture(base, 32, 24, 5)
        b = make_texture(base, 32, 24, 5)
        assert np.array_equal(a, b)
        assert a.shape == (24, 32)
        assert a.min() >= 0.0 and a.max() <= 255.0

    def test_unknown_texture_rejected(self):
        with pytest.raises(UnsupportedFormat):
            make_texture("plasma", 16, 16, 0)


class TestSynth:
    def test_single_regime_no_breaks(self):
        res = synth_video(SynthSpec(32, 32, [(10, MotionParams())]))
        assert res.breaks == []
        assert len(res.sequence) == 10

    def test_two_regimes_one_break(self):
        still = MotionParams()
        moving = MotionParams(tx=2.0)
        res = synth_video(SynthSpec(32, 32, [(6, still), (6, moving)]))
        assert res.breaks == [6]
        assert len(res.params) == 11

    def test_one_frame_kick_merges_adjacent_breaks(self):
        still = MotionParams()
        kick = MotionParams(tx=8.0)
        res = synth_video(SynthSpec(32, 32, [(6, still), (1, kick), (5, still)]))
        assert res.breaks == [6]

    def test_equal_motion_regimes_do_not_break(self):
        m = MotionParams(tx=1.0)
        res = synth_video(SynthSpec(32, 32, [(5, m), (5, m)]))
        assert res.breaks == []

    def test_static_video_frames_identical(self):
        res = synth_video(SynthSpec(32, 32, [(8, MotionParams())]))
        first = res.sequence.frames[0].data
        assert all(f.data == first for f in res.sequence.frames)

    def test_deterministic(self):
        spec = SynthSpec(32, 32, [(4, MotionParams(tx=0.5)), (4, MotionParams(theta=0.1))])
        a = synth_video(spec)
        b = synth_video(spec)
        assert all(x.data == y.data for x, y in zip(a.sequence.frames, b.sequence.frames))

    def test_bad_regimes_rejected(self):
        with pytest.raises(DegenerateMotion):
            SynthSpec(32, 32, [])
        with pytest.raises(DegenerateMotion):
            SynthSpec(32, 32, [(0, MotionParams())])
