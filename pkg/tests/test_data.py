import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavehdr.data import (
    Augment,
    SceneSpec,
    Shape,
    apply_augment,
    apply_to_sample,
    batch_plan,
    bracket_coverage,
    crop_augment,
    default_scene_spec,
    flip_width,
    iterate_batches,
    list_samples,
    load_ldr_triplet,
    load_sample,
    make_synthetic_dataset,
    parse_exposure_file,
    prefetch,
    quantize,
    read_hdr,
    render_bracket,
    save_sample,
    synth_scene,
    write_hdr,
)
from wavehdr.errors import ConfigError, DataError, GeometryError
from wavehdr.hdr import BracketSample, gamma_to_linear


class TestScene:
    def test_same_seed_same_scene(self):
        a = synth_scene(default_scene_spec(3))
        b = synth_scene(default_scene_spec(3))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, synth_scene(default_scene_spec(4)))

    def test_no_shapes_is_background(self):
        spec = SceneSpec(seed=0, height=8, width=8, channels=1, log_level=(0.0,), log_slope=(1.0, 0.0), texture_depth=0.0)
        r = synth_scene(spec)[0, 0]
        want = np.exp(np.arange(8) / 8.0)[:, None] * np.ones(8)
        np.testing.assert_allclose(r, want, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_dynamic_range_and_coverage(self, seed):
        spec = default_scene_spec(seed)
        r = synth_scene(spec)
        assert np.all(r >= 0)
        assert r.max() / r.min() >= 1000
        assert bracket_coverage(render_bracket(spec)) == (True, True)

    def test_invalid_specs(self):
        with pytest.raises(ConfigError):
            SceneSpec(seed=0, height=1, width=8)
        with pytest.raises(ConfigError):
            Shape("rect", (1, 1), (2, 2), (1.0, 1.0, 1.0), motion=((0, 0), (1, 0), (0, 0)))
        with pytest.raises(ConfigError):
            Shape("rect", (1, 1), (2, 2), (-1.0, 1.0, 1.0))
        with pytest.raises(ConfigError):
            Shape("star", (1, 1), (2, 2), (1.0, 1.0, 1.0))

    def test_shape_moves_by_its_displacement(self):
        shape = Shape("rect", (8, 8), (2, 2), (5.0,), motion=((0, 3), (0, 0), (-2, 0)))
        spec = SceneSpec(seed=0, height=16, width=16, channels=1, log_level=(-3.0,), log_slope=(0.0, 0.0), texture_depth=0.0, shapes=[shape])
        masks = [synth_scene(spec, i)[0, 0] == 5.0 for i in range(3)]
        np.testing.assert_array_equal(np.roll(masks[1], 3, axis=1), masks[0])
        np.testing.assert_array_equal(np.roll(masks[1], -2, axis=0), masks[2])


class TestRender:
    def test_times(self):
        s = render_bracket(np.ones((1, 1, 4, 4)), (-2, 0, 2))
        assert s.exposure_time == (0.25, 1.0, 4.0)

    def test_constant_at_reference_saturates(self):
        s = render_bracket(np.full((1, 3, 4, 4), 2.5))
        np.testing.assert_array_equal(s.ldr[1], 1.0)
        np.testing.assert_array_equal(s.gt_hdr, 1.0)

    def test_exposure_consistency_without_motion(self):
        spec = default_scene_spec(7, max_motion=0)
        s = render_bracket(spec)
        lin = [gamma_to_linear(f, t) for f, t in zip(s.ldr, s.exposure_time)]
        # one 8-bit step at the top of the range, after linearization
        for a, b, (fa, fb) in ((0, 1, (s.ldr[0], s.ldr[1])), (1, 2, (s.ldr[1], s.ldr[2]))):
            ok = (fa > 0.05) & (fa < 0.95) & (fb > 0.05) & (fb < 0.95)
            assert ok.sum() > 50
            step = max(s.exposure_time[a] ** -1, s.exposure_time[b] ** -1) * 2.2 / 255
            assert np.max(np.abs(lin[a] - lin[b])[ok]) <= step

    def test_gt_is_reference_radiance(self):
        spec = default_scene_spec(8)
        s = render_bracket(spec)
        r = synth_scene(spec)
        k = s.gt_hdr / r
        assert np.allclose(k, k.flat[0], rtol=1e-6)
        assert abs(np.percentile(s.gt_hdr, 99) - 1.0) < 1e-6

    def test_quantize_grid(self):
        x = np.random.default_rng(0).uniform(-0.2, 1.2, 1000)
        q = quantize(x)
        np.testing.assert_array_equal(q * 65535 % 257, 0)
        assert np.max(np.abs(q - np.clip(x, 0, 1))) <= 0.5 / 255 + 1e-12
        with pytest.raises(ConfigError):
            quantize(x, 0)


class TestFiles:
    def test_round_trip(self, tmp_path):
        s = render_bracket(default_scene_spec(1, 24, 40))
        save_sample(s, tmp_path / "x")
        t = load_sample(tmp_path / "x")
        for a, b in zip(s.ldr, t.ldr):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(s.gt_hdr, t.gt_hdr)
        assert t.exposure_time == s.exposure_time

    def test_single_channel_round_trip(self, tmp_path):
        s = render_bracket(default_scene_spec(2, 16, 16, channels=1))
        save_sample(s, tmp_path / "g")
        t = load_sample(tmp_path / "g")
        np.testing.assert_array_equal(s.ldr[2], t.ldr[2])

    def test_hdr_bitwise(self, tmp_path):
        x = np.random.default_rng(0).uniform(0, 100, (1, 3, 5, 7)).astype(np.float32)
        write_hdr(tmp_path / "a.fhdr", x)
        np.testing.assert_array_equal(read_hdr(tmp_path / "a.fhdr"), x)
        raw = (tmp_path / "a.fhdr").read_bytes()
        assert raw[:4] == b"FHDR" and len(raw) == 20 + 4 * 105

    def test_exposure_parsing(self, tmp_path):
        p = tmp_path / "exposure.txt"
        p.write_text("−2\n0\n2\n")
        assert parse_exposure_file(p) == (-2.0, 0.0, 2.0)
        p.write_text("-2\n0\n")
        with pytest.raises(DataError, match="exposure.txt"):
            parse_exposure_file(p)
        p.write_text("0\n-2\n2\n")
        with pytest.raises(DataError):
            parse_exposure_file(p)
        p.write_text("a\nb\nc\n")
        with pytest.raises(DataError):
            parse_exposure_file(p)

    def test_missing_and_bad_files(self, tmp_path):
        s = render_bracket(default_scene_spec(3, 16, 16))
        d = save_sample(s, tmp_path / "s")
        (d / "ldr_3.png").unlink()
        with pytest.raises(DataError, match="ldr_3"):
            load_sample(d)
        (d / "gt.fhdr").write_bytes(b"nope")
        with pytest.raises(DataError, match="gt.fhdr"):
            read_hdr(d / "gt.fhdr")

    def test_dimension_mismatch(self, tmp_path):
        a = render_bracket(default_scene_spec(4, 16, 16))
        b = render_bracket(default_scene_spec(4, 16, 24))
        save_sample(a, tmp_path / "a")
        save_sample(b, tmp_path / "b")
        (tmp_path / "b" / "gt.fhdr").replace(tmp_path / "a" / "gt.fhdr")
        with pytest.raises(DataError):
            load_sample(tmp_path / "a")
        paths = [tmp_path / "a" / "ldr_1.png", tmp_path / "b" / "ldr_2.png", tmp_path / "a" / "ldr_3.png"]
        with pytest.raises(DataError):
            load_ldr_triplet(paths, tmp_path / "a" / "exposure.txt")

    def test_synthetic_dataset(self, tmp_path):
        make_synthetic_dataset(tmp_path, 3, seed=5, size=16)
        dirs = list_samples(tmp_path)
        assert [d.name for d in dirs] == ["0000", "0001", "0002"]
        with pytest.raises(DataError):
            list_samples(tmp_path / "none")


def _indexed_sample(h=16, w=16):
    base = np.arange(h * w, dtype=np.float64).reshape(1, 1, h, w)
    ldr = tuple((base + k) / (h * w + 3) for k in range(3))
    return BracketSample(ldr, (0.25, 1.0, 4.0), base.copy())


class TestAugment:
    def test_identity(self):
        s = _indexed_sample()
        t = apply_to_sample(s, Augment(0, 0, 16, False, 0))
        for a, b in zip(s.ldr + (s.gt_hdr,), t.ldr + (t.gt_hdr,)):
            np.testing.assert_array_equal(a, b)

    def test_flip_involution(self):
        x = np.random.default_rng(0).standard_normal((1, 2, 4, 6))
        np.testing.assert_array_equal(flip_width(flip_width(x)), x)

    def test_crop_index_mapping(self):
        s = _indexed_sample(40, 48)
        rng = np.random.default_rng(1)
        for _ in range(50):
            top, left = int(rng.integers(0, 33)), int(rng.integers(0, 41))
            out = apply_augment(s.gt_hdr, Augment(top, left, 8, False, 0))
            r, c = int(rng.integers(0, 8)), int(rng.integers(0, 8))
            assert out[0, 0, r, c] == s.gt_hdr[0, 0, r + top, c + left]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_joint_transform(self, seed):
        s = _indexed_sample()
        t = crop_augment(s, 8, seed)
        # LDR k is (gt + k) / const, so the same map must hold after the transform
        for k, f in enumerate(t.ldr):
            np.testing.assert_allclose(f * (16 * 16 + 3) - k, t.gt_hdr, atol=1e-9)
        u = crop_augment(s, 8, seed)
        np.testing.assert_array_equal(t.gt_hdr, u.gt_hdr)

    def test_rotation_is_quarter_turn(self):
        s = _indexed_sample(8, 8)
        out = apply_augment(s.gt_hdr, Augment(0, 0, 8, False, 1))
        np.testing.assert_array_equal(out[0, 0], np.rot90(s.gt_hdr[0, 0]))

    def test_bad_crops(self):
        s = _indexed_sample()
        with pytest.raises(GeometryError):
            crop_augment(s, 24, 0)
        with pytest.raises(GeometryError):
            crop_augment(s, 12, 0)


class TestIteration:
    def test_plan_covers_each_pass(self):
        plan = batch_plan(5, 2, 5, 0)
        flat = [i for b in plan for i in b]
        assert sorted(flat[:5]) == list(range(5)) and sorted(flat[5:]) == list(range(5))
        assert plan == batch_plan(5, 2, 5, 0)
        assert plan != batch_plan(5, 2, 5, 1)

    def test_prefetch_preserves_order(self):
        samples = [_indexed_sample() for _ in range(3)]
        a = [b[0].gt_hdr for b in iterate_batches(samples, 2, 6, 8, 0, 0)]
        b = [b[0].gt_hdr for b in prefetch(iterate_batches(samples, 2, 6, 8, 0, 0), depth=3)]
        assert len(a) == len(b) == 6
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_prefetch_surfaces_errors(self):
        def gen():
            yield 1
            raise DataError("boom")

        it = prefetch(gen())
        assert next(it) == 1
        with pytest.raises(DataError):
            next(it)
