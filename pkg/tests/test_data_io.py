import io
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from fadnet.data import (
    LayeredField,
    PreprocessConfig,
    StereoSample,
    denormalize_colors,
    gen_random_dot_stereogram,
    generate_dataset,
    load_manifest,
    load_pfm,
    normalize_colors,
    random_crop_pair,
    read_disparity,
    read_disparity_png16,
    read_image,
    read_manifest,
    read_pfm,
    save_sample,
    to_batch,
    warp_consistency_error,
    write_disparity_png16,
    write_image,
    write_manifest,
    write_pfm,
)
from fadnet.errors import ContractError, DimensionError, FormatError


class TestPfm:
    def test_small_map_round_trips_bitwise(self):
        arr = np.array([[1, 2], [3, 4]], dtype=np.float32)
        data = write_pfm(arr)
        back, scale = read_pfm(data)
        assert back.tobytes() == arr.tobytes()
        assert scale == -1.0
        assert write_pfm(back, scale) == data

    def test_rows_stored_bottom_up(self):
        data = write_pfm(np.array([[1, 2], [3, 4]], dtype=np.float32))
        payload = np.frombuffer(data[-16:], dtype="<f4")
        assert payload.tolist() == [3, 4, 1, 2]

    def test_negative_scale_is_little_endian(self):
        raw = b"Pf\n2 1\n-1.0\n" + np.array([1.5, -2.0], dtype="<f4").tobytes()
        arr, _ = read_pfm(raw)
        assert arr.tolist() == [[1.5, -2.0]]

    def test_positive_scale_is_big_endian(self):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        data = write_pfm(arr, scale=1.0)
        assert np.frombuffer(data[-24:], dtype=">f4")[0] == 3.0
        back, scale = read_pfm(data)
        np.testing.assert_array_equal(back, arr)
        assert scale == 1.0

    def test_color(self, rng):
        arr = rng.random((3, 4, 3)).astype(np.float32)
        back, _ = read_pfm(write_pfm(arr))
        assert back.shape == (3, 4, 3)
        assert back.tobytes() == arr.tobytes()

    def test_color_header_with_one_channel_requested(self, rng):
        with pytest.raises(FormatError):
            read_pfm(write_pfm(rng.random((2, 2, 3)).astype(np.float32)), channels=1)

    @pytest.mark.parametrize(
        "raw, offset",
        [
            (b"P7\n2 2\n-1\n", 0),
            (b"Pf\nx 2\n-1\n", 3),
            (b"Pf\n2 2\n0\n" + bytes(16), 7),
        ],
    )
    def test_malformed_header(self, raw, offset):
        with pytest.raises(FormatError) as err:
            read_pfm(raw)
        assert err.value.offset == offset
        assert f"offset {offset}" in str(err.value)

    def test_truncated_payload(self):
        with pytest.raises(FormatError, match="truncated"):
            read_pfm(b"Pf\n2 2\n-1.0\n" + bytes(12))

    @settings(max_examples=25)
    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip_property(self, arr):
        data = write_pfm(arr)
        back, scale = read_pfm(data)
        assert back.tobytes() == arr.tobytes()
        assert write_pfm(back, scale) == data


class TestPng16:
    def test_encoding_rule(self):
        raw = np.array([[256, 0]], dtype=np.uint16)
        buf = io.BytesIO()
        Image.fromarray(raw).save(buf, format="PNG")
        disp, valid = read_disparity_png16(buf.getvalue())
        assert disp[0, 0] == 1.0
        assert valid.tolist() == [[True, False]]

    def test_round_trip_quantization(self, rng):
        disp = rng.uniform(0.1, 200, (16, 24))
        valid = rng.random(disp.shape) > 0.3
        back, back_valid = read_disparity_png16(write_disparity_png16(disp, valid))
        assert (back_valid == valid).all()
        assert np.abs(back[valid] - disp[valid]).max() < 1 / 512

    def test_rejects_8_bit(self):
        buf = io.BytesIO()
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(buf, format="PNG")
        with pytest.raises(FormatError):
            read_disparity_png16(buf.getvalue())


class TestImages:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = np.round(rng.random((3, 5, 7)) * 255) / 255
        path = str(tmp_path / "a.ppm")
        write_image(path, img)
        np.testing.assert_allclose(read_image(path), img, atol=1e-6)

    def test_png_round_trip(self, tmp_path, rng):
        img = np.round(rng.random((3, 4, 6)) * 255) / 255
        path = str(tmp_path / "a.png")
        write_image(path, img)
        np.testing.assert_allclose(read_image(path), img, atol=1e-6)

    def test_grayscale_replicated(self, tmp_path):
        path = str(tmp_path / "g.pgm")
        with open(path, "wb") as fh:
            fh.write(b"P5\n2 1\n255\n" + bytes([0, 255]))
        img = read_image(path)
        assert img.shape == (3, 1, 2)
        assert (img[:, 0, 1] == 1.0).all()

    def test_disparity_from_png_and_pfm(self, tmp_path, rng):
        disp = rng.uniform(1, 50, (4, 4)).astype(np.float32)
        with open(tmp_path / "d.png", "wb") as fh:
            fh.write(write_disparity_png16(disp))
        d1, v1 = read_disparity(str(tmp_path / "d.png"))
        assert v1.all() and np.abs(d1 - disp).max() < 1 / 512
        disp[0, 0] = np.inf
        with open(tmp_path / "d.pfm", "wb") as fh:
            fh.write(write_pfm(disp))
        d2, v2 = read_disparity(str(tmp_path / "d.pfm"))
        assert not v2[0, 0] and v2.sum() == 15


class TestPreprocess:
    def test_defaults(self):
        cfg = PreprocessConfig()
        assert cfg.mean == (0.485, 0.456, 0.406)
        assert cfg.std == (0.229, 0.224, 0.225)
        assert (PreprocessConfig.sceneflow().crop_h, PreprocessConfig.sceneflow().crop_w) == (384, 768)
        assert (PreprocessConfig.kitti().crop_h, PreprocessConfig.kitti().crop_w) == (256, 1024)

    def test_mean_pixel_maps_to_zero(self):
        px = np.array([0.485, 0.456, 0.406]).reshape(3, 1, 1)
        np.testing.assert_allclose(normalize_colors(px), 0, atol=1e-12)

    def test_identity_config(self, rng):
        img = rng.random((3, 4, 4))
        cfg = PreprocessConfig(mean=(0, 0, 0), std=(1, 1, 1))
        np.testing.assert_array_equal(normalize_colors(img, cfg), img)

    def test_inverse(self, rng):
        img = rng.random((2, 3, 5, 5))
        np.testing.assert_allclose(denormalize_colors(normalize_colors(img)), img, atol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            normalize_colors(np.zeros((4, 2, 2)))


class TestCrop:
    @pytest.fixture
    def sample(self, rng):
        return StereoSample(
            rng.random((3, 20, 30)).astype(np.float32),
            rng.random((3, 20, 30)).astype(np.float32),
            rng.uniform(1, 9, (20, 30)).astype(np.float32),
            "s",
        )

    def test_full_size_is_identity(self, sample):
        out = random_crop_pair(sample, PreprocessConfig(crop_h=20, crop_w=30), 0)
        assert (out.left == sample.left).all() and (out.gt_disparity == sample.gt_disparity).all()

    def test_deterministic(self, sample):
        cfg = PreprocessConfig(crop_h=8, crop_w=12)
        a = random_crop_pair(sample, cfg, 5)
        b = random_crop_pair(sample, cfg, 5)
        assert a.left.tobytes() == b.left.tobytes()

    def test_same_offset_everywhere(self, sample):
        from fadnet.data.dataset import crop_offsets

        cfg = PreprocessConfig(crop_h=8, crop_w=12)
        y0, x0 = crop_offsets(20, 30, cfg, 9)
        out = random_crop_pair(sample, cfg, 9)
        assert (out.gt_disparity == sample.gt_disparity[y0 : y0 + 8, x0 : x0 + 12]).all()
        assert (out.right == sample.right[:, y0 : y0 + 8, x0 : x0 + 12]).all()
        assert (out.left == sample.left[:, y0 : y0 + 8, x0 : x0 + 12]).all()

    def test_too_large(self, sample):
        with pytest.raises(ContractError):
            random_crop_pair(sample, PreprocessConfig(crop_h=21, crop_w=30), 0)

    def test_sample_shape_checks(self):
        with pytest.raises(DimensionError):
            StereoSample(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
        with pytest.raises(DimensionError):
            StereoSample(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), np.zeros((4, 5)))


class TestStereogram:
    def test_zero_field(self):
        s = gen_random_dot_stereogram(16, 32, 0, rng_seed=1)
        assert (s.left == s.right).all()
        assert s.valid.all()

    def test_constant_shift_on_ramp(self):
        s = gen_random_dot_stereogram(8, 32, 4, rng_seed=1, texture="ramp")
        # left(x) sees the surface point that the right view shows at x - 4
        np.testing.assert_array_equal(s.right[:, :, :-4], s.left[:, :, 4:])
        np.testing.assert_array_equal(s.gt_disparity, 4)
        assert not s.valid[:, :4].any() and s.valid[:, 4:].all()

    def test_gt_equals_field(self):
        fld = LayeredField(2.0, ((2, 10, 5, 20, 6.5),))
        s = gen_random_dot_stereogram(16, 48, fld, rng_seed=0)
        np.testing.assert_array_equal(s.gt_disparity, fld.rasterize(16, 48))

    def test_half_integer_layers_warp_consistent(self):
        fld = LayeredField(1.5, ((0, 8, 10, 30, 5.5), (4, 12, 20, 40, 9.0)))
        s = gen_random_dot_stereogram(16, 64, fld, rng_seed=4)
        assert warp_consistency_error(s) < 1e-6
        assert 0.5 < s.valid.mean() < 1.0

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_every_seed_warp_consistent(self, seed):
        for s in generate_dataset(2, 32, 64, seed, max_disparity=10):
            assert warp_consistency_error(s) < 1e-6

    def test_occlusions_invalid(self):
        fld = LayeredField(0.0, ((0, 8, 20, 30, 6.0),))
        s = gen_random_dot_stereogram(8, 64, fld, rng_seed=2)
        # the box moves 6 px left in the right view and hides background columns 14..19
        assert not s.valid[:, 14:20].any()
        assert s.valid[:, :14].all() and s.valid[:, 20:].all()

    @pytest.mark.parametrize("bad", [16.0, -1.0, 2.25])
    def test_out_of_range_or_off_grid(self, bad):
        with pytest.raises(ContractError):
            gen_random_dot_stereogram(8, 64, bad, rng_seed=0)

    def test_dataset_deterministic(self):
        a = generate_dataset(3, 32, 64, seed=5)
        b = generate_dataset(3, 32, 64, seed=5)
        for x, y in zip(a, b):
            assert x.left.tobytes() == y.left.tobytes() and x.gt_disparity.tobytes() == y.gt_disparity.tobytes()
        assert [s.source_id for s in a] == ["000000", "000001", "000002"]


class TestManifest:
    def test_save_and_load(self, tmp_path):
        samples = generate_dataset(2, 16, 32, seed=0, max_disparity=6)
        entries = [save_sample(str(tmp_path), s) for s in samples]
        manifest = str(tmp_path / "list.txt")
        write_manifest(manifest, entries)
        loaded = load_manifest(manifest)
        assert [s.source_id for s in loaded] == ["000000", "000001"]
        for a, b in zip(samples, loaded):
            assert a.left.tobytes() == b.left.tobytes()
            assert (a.mask() == b.mask()).all()
            np.testing.assert_array_equal(a.gt_disparity[a.valid], b.gt_disparity[b.valid])

    def test_zero_disparity_survives_round_trip(self, tmp_path):
        s = gen_random_dot_stereogram(8, 32, 0, rng_seed=3, source_id="z")
        assert s.mask().all()
        paths = save_sample(str(tmp_path), s)
        write_manifest(str(tmp_path / "m.txt"), [paths])
        (loaded,) = load_manifest(str(tmp_path / "m.txt"))
        assert loaded.mask().all()

    def test_zero_without_explicit_mask_is_missing(self):
        from fadnet.data import StereoSample

        img = np.zeros((3, 2, 2), dtype=np.float32)
        s = StereoSample(img, img, np.array([[0.0, 1.0], [2.0, 0.0]], dtype=np.float32))
        assert s.mask().tolist() == [[False, True], [True, False]]

    def test_comments_relative_paths_and_optional_gt(self, tmp_path):
        (tmp_path / "m.txt").write_text("# header\nl.png r.png\n\nsub/l2.png sub/r2.png sub/gt.pfm  # note\n")
        entries = read_manifest(str(tmp_path / "m.txt"))
        assert entries[0] == (str(tmp_path / "l.png"), str(tmp_path / "r.png"), None)
        assert entries[1][2] == os.path.join(str(tmp_path), "sub/gt.pfm")

    def test_bad_line(self, tmp_path):
        (tmp_path / "m.txt").write_text("only_one\n")
        with pytest.raises(FormatError, match="m.txt:1"):
            read_manifest(str(tmp_path / "m.txt"))

    def test_to_batch(self):
        samples = generate_dataset(2, 16, 32, seed=0, max_disparity=6)
        left, right, gt, mask = to_batch(samples)
        assert left.shape == (2, 3, 16, 32) and left.dtype == np.float32
        assert gt.shape == mask.shape == (2, 1, 16, 32)
