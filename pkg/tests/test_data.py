"""Bayer packing, synthetic degradation and the paired-directory format."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperconv_kit.data import (DatasetError, DegradationParams, PairedSample, bayer_mosaic, item_seed,
                                load_pair_dir, make_synthetic_dataset, pack_bayer, procedural_texture,
                                read_f32, split_ids, synth_pair, unpack_bayer, write_f32, write_pair_dir)

CLEAN = dict(read_noise=0.0, shot_gain=0.0, channel_gains=(1.0, 1.0, 1.0), gamma=1.0)


class TestBayer:
    def test_two_by_two(self):
        packed = pack_bayer(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert packed.shape == (4, 1, 1)
        assert packed.ravel().tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_full_patch_shape(self):
        assert pack_bayer(np.zeros((1, 448, 448), np.float32)).shape == (4, 224, 224)

    @pytest.mark.parametrize("shape", [(1, 3, 4), (1, 4, 5), (2, 4, 4)])
    def test_odd_or_bad_shape(self, shape):
        with pytest.raises(ValueError):
            pack_bayer(np.zeros(shape))

    def test_unpack_rejects(self):
        with pytest.raises(ValueError):
            unpack_bayer(np.zeros((3, 2, 2)))

    def test_phase_loop_oracle(self, rng):
        m = rng.uniform(size=(1, 6, 8))
        p = pack_bayer(m)
        for y in range(3):
            for x in range(4):
                assert p[:, y, x].tolist() == [m[0, 2 * y, 2 * x], m[0, 2 * y, 2 * x + 1],
                                               m[0, 2 * y + 1, 2 * x], m[0, 2 * y + 1, 2 * x + 1]]

    def test_mosaic_samples_rggb(self, rng):
        rgb = rng.uniform(size=(3, 4, 4))
        m = bayer_mosaic(rgb)[0]
        assert m[0, 0] == rgb[0, 0, 0] and m[0, 1] == rgb[1, 0, 1]
        assert m[1, 0] == rgb[1, 1, 0] and m[1, 1] == rgb[2, 1, 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.data())
def test_pack_unpack_roundtrip(h, w, data):
    m = data.draw(arrays(np.float32, (1, 2 * h, 2 * w), elements=st.floats(0, 1, width=32)))
    out = unpack_bayer(pack_bayer(m))
    assert out.dtype == m.dtype
    np.testing.assert_array_equal(out, m)


class TestSynth:
    def test_degenerate_is_exact_mosaic(self, rng):
        clean = rng.uniform(size=(3, 16, 24)).astype(np.float32)
        s = synth_pair(clean, DegradationParams(**CLEAN))
        np.testing.assert_array_equal(s.raw, pack_bayer(bayer_mosaic(clean)))
        np.testing.assert_array_equal(unpack_bayer(s.raw), bayer_mosaic(clean))
        np.testing.assert_array_equal(s.target, clean)

    def test_seed_reproduces(self):
        clean = procedural_texture(1, 32)
        p = DegradationParams(seed=9)
        a, b = synth_pair(clean, p), synth_pair(clean, p)
        np.testing.assert_array_equal(a.raw, b.raw)
        assert not np.array_equal(a.raw, synth_pair(clean, DegradationParams(seed=10)).raw)

    @pytest.mark.parametrize("sigma,gain", [(0.02, 0.01), (0.05, 0.0), (0.0, 0.02)])
    def test_noise_std_matches_formula(self, sigma, gain):
        clean = np.full((3, 256, 256), 0.5, np.float32)
        kw = dict(channel_gains=(1.0, 1.0, 1.0), gamma=1.0)
        noisy = synth_pair(clean, DegradationParams(read_noise=sigma, shot_gain=gain, seed=5, **kw)).raw
        quiet = synth_pair(clean, DegradationParams(read_noise=0.0, shot_gain=0.0, **kw)).raw
        expected = math.sqrt(sigma ** 2 + 0.5 * gain)
        assert abs(np.std(noisy - quiet) / expected - 1) < 0.05

    def test_values_clipped(self):
        raw = synth_pair(np.ones((3, 32, 32), np.float32), DegradationParams(read_noise=0.5, gamma=1.0)).raw
        assert raw.min() >= 0.0 and raw.max() <= 1.0

    def test_gains_and_gamma(self):
        clean = np.full((3, 4, 4), 0.5, np.float32)
        s = synth_pair(clean, DegradationParams(read_noise=0, shot_gain=0, channel_gains=(2.0, 1.0, 4.0), gamma=2.0))
        np.testing.assert_allclose(s.raw[:, 0, 0], [0.125, 0.25, 0.25, 0.0625], rtol=1e-6)

    @pytest.mark.parametrize("bad", [dict(read_noise=-1.0), dict(shot_gain=-0.1),
                                     dict(channel_gains=(1.0, 0.0, 1.0)), dict(channel_gains=(1.0, 1.0)),
                                     dict(gamma=0.0)])
    def test_invalid_params(self, bad):
        with pytest.raises(ValueError):
            DegradationParams(**bad)

    def test_bad_clean_shape(self):
        with pytest.raises(ValueError):
            synth_pair(np.zeros((4, 8, 8)), DegradationParams())

    def test_sample_shape_contract(self):
        with pytest.raises(DatasetError):
            PairedSample(np.zeros((4, 4, 4)), np.zeros((3, 8, 9)), "x")


class TestTexture:
    def test_range_and_shape(self):
        for seed in range(5):
            img = procedural_texture(seed, (48, 64))
            assert img.shape == (3, 48, 64) and img.min() >= 0 and img.max() <= 1

    def test_reproducible(self):
        np.testing.assert_array_equal(procedural_texture(3, 32), procedural_texture(3, 32))

    def test_seeds_differ(self):
        assert np.max(np.abs(procedural_texture(0, 64) - procedural_texture(1, 64))) > 0.05


class TestDataset:
    def test_synthetic_dataset(self):
        ds = make_synthetic_dataset(4, 32, seed=2)
        assert [s.id for s in ds] == ["00000", "00001", "00002", "00003"]
        assert ds[0].raw.shape == (4, 16, 16) and ds[0].target.shape == (3, 32, 32)
        again = make_synthetic_dataset(4, 32, seed=2)
        assert all(np.array_equal(a.raw, b.raw) for a, b in zip(ds, again))

    def test_odd_size(self):
        with pytest.raises(ValueError):
            make_synthetic_dataset(1, 33)

    def test_item_seed_stable(self):
        assert item_seed(0, "a") == item_seed(0, "a") != item_seed(1, "a")

    def test_split_deterministic_and_disjoint(self):
        ids = [f"{i:05d}" for i in range(200)]
        train, held = split_ids(ids, 0, 0.2)
        assert split_ids(ids, 0, 0.2) == (train, held)
        assert sorted(train + held) == ids
        assert 20 <= len(held) <= 60


class TestF32:
    def test_roundtrip(self, tmp_path, rng):
        a = rng.uniform(size=(4, 3, 5)).astype(np.float32)
        write_f32(tmp_path / "a.f32", a)
        np.testing.assert_array_equal(read_f32(tmp_path / "a.f32"), a)
        assert (tmp_path / "a.f32").read_bytes().startswith(b"HCKF32 <f4 4,3,5\n")

    @pytest.mark.parametrize("blob,msg", [
        (b"HCKF32 <f4 2,2", "header"),
        (b"NOPE <f4 1\n\0\0\0\0", "magic"),
        (b"HCKF32 <f8 1\n\0\0\0\0\0\0\0\0", "dtype"),
        (b"HCKF32 <f4 2,2\n\0\0\0\0", "payload"),
        (b"HCKF32 <f4 x\n", "header"),
    ])
    def test_malformed(self, tmp_path, blob, msg):
        f = tmp_path / "bad_raw.f32"
        f.write_bytes(blob)
        with pytest.raises(DatasetError, match=msg) as exc:
            read_f32(f)
        assert str(f) in str(exc.value)


class TestPairDir:
    def test_empty(self, tmp_path):
        assert load_pair_dir(tmp_path) == []

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(DatasetError):
            load_pair_dir(tmp_path / "missing")

    def test_one_pair(self, tmp_path):
        ds = make_synthetic_dataset(1, 16)
        write_pair_dir(tmp_path, ds)
        loaded = load_pair_dir(tmp_path)
        assert len(loaded) == 1 and loaded[0].id == "00000"
        np.testing.assert_array_equal(loaded[0].raw, ds[0].raw)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["count"] == 1 and manifest["format"] == "f32"

    def test_orphan_named(self, tmp_path):
        write_f32(tmp_path / "lonely_raw.f32", np.zeros((4, 2, 2)))
        write_pair_dir(tmp_path, make_synthetic_dataset(1, 8))
        with pytest.raises(DatasetError, match="lonely"):
            load_pair_dir(tmp_path)

    def test_malformed_names_path(self, tmp_path):
        write_pair_dir(tmp_path, make_synthetic_dataset(1, 8))
        (tmp_path / "00000_target.f32").write_bytes(b"garbage")
        with pytest.raises(DatasetError, match="00000_target"):
            load_pair_dir(tmp_path)

    def test_shape_mismatch_names_path(self, tmp_path):
        write_f32(tmp_path / "a_raw.f32", np.zeros((4, 2, 2)))
        write_f32(tmp_path / "a_target.f32", np.zeros((3, 4, 5)))
        with pytest.raises(DatasetError, match="a_raw"):
            load_pair_dir(tmp_path)

    def test_sorted_ids(self, tmp_path):
        for sid in ("b", "a", "c"):
            write_f32(tmp_path / f"{sid}_raw.f32", np.zeros((4, 2, 2)))
            write_f32(tmp_path / f"{sid}_target.f32", np.zeros((3, 4, 4)))
        assert [s.id for s in load_pair_dir(tmp_path)] == ["a", "b", "c"]

    def test_png_roundtrip(self, tmp_path):
        ds = make_synthetic_dataset(2, 16, seed=4)
        write_pair_dir(tmp_path, ds, fmt="png")
        loaded = load_pair_dir(tmp_path)
        for a, b in zip(ds, loaded):
            assert np.max(np.abs(a.raw - b.raw)) <= 0.5 / 65535 + 1e-7
            assert np.max(np.abs(a.target - b.target)) <= 0.5 / 255 + 1e-7

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            write_pair_dir(tmp_path, [], fmt="jpg")
