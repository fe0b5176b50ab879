import numpy as np
import pytest

from cl2s.data import (
    HazeParams,
    PairedSample,
    exact_dehaze_oracle,
    load_dataset,
    make_synthetic_set,
    random_crop_pair,
    synthesize_haze,
    write_flat_pairs,
)
from cl2s.images import save_image
from cl2s.metrics import psnr


def _params(a=1.0, beta=1.0, depth=None, size=8):
    if depth is None:
        depth = np.full((size, size), 0.5)
    return HazeParams(a=np.full(3, a), beta=beta, depth=depth)


class TestSynthesizeHaze:
    def test_no_haze_when_beta_zero(self):
        rng = np.random.default_rng(0)
        clear = rng.uniform(0, 1, (8, 8, 3))
        hazy = synthesize_haze(clear, _params(beta=0.0))
        assert np.allclose(hazy, clear, atol=1e-12)

    def test_full_haze_limit(self):
        clear = np.random.default_rng(1).uniform(0, 1, (8, 8, 3))
        hazy = synthesize_haze(clear, _params(a=0.9, beta=1.0, depth=np.full((8, 8), 50.0)))
        assert np.abs(hazy - 0.9).max() < 1e-12

    def test_direct_formula(self):
        # t = 0.5 via beta*depth = ln 2
        clear = np.full((4, 4, 3), 0.8)
        p = _params(a=1.0, beta=np.log(2.0), depth=np.ones((4, 4)), size=4)
        hazy = synthesize_haze(clear, p)
        assert np.allclose(hazy, 0.9, atol=1e-12)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            clear = rng.uniform(0, 1, (8, 8, 3))
            p = HazeParams(a=rng.uniform(0.7, 1.0, 3), beta=rng.uniform(0, 3),
                           depth=rng.uniform(0, 3, (8, 8)))
            hazy = synthesize_haze(clear, p)
            assert hazy.min() >= 0.0 and hazy.max() <= 1.0

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError, match="atmospheric light"):
            HazeParams(a=[1.2, 0.5, 0.5], beta=1.0, depth=np.zeros((4, 4)))
        with pytest.raises(ValueError, match="scattering"):
            HazeParams(a=[0.8] * 3, beta=-1.0, depth=np.zeros((4, 4)))
        with pytest.raises(ValueError, match="depth"):
            HazeParams(a=[0.8] * 3, beta=1.0, depth=-np.ones((4, 4)))

    def test_depth_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            synthesize_haze(np.zeros((8, 8, 3)), _params(size=4))


class TestDehazeOracle:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        clear = rng.uniform(0, 1, (16, 16, 3))
        p = HazeParams(a=rng.uniform(0.7, 1.0, 3), beta=1.2, depth=rng.uniform(0, 3, (16, 16)))
        recovered = exact_dehaze_oracle(synthesize_haze(clear, p), p)
        assert np.abs(recovered - clear).max() < 1e-6

    def test_identity_at_full_transmission(self):
        hazy = np.random.default_rng(4).uniform(0, 1, (8, 8, 3))
        assert np.allclose(exact_dehaze_oracle(hazy, _params(beta=0.0)), hazy, atol=1e-12)

    def test_direct_inversion(self):
        hazy = np.full((4, 4, 3), 0.9)
        p = _params(a=1.0, beta=np.log(2.0), depth=np.ones((4, 4)), size=4)
        assert np.allclose(exact_dehaze_oracle(hazy, p), 0.8, atol=1e-12)

    def test_transmission_floor(self):
        p = _params(beta=10.0, depth=np.full((4, 4), 10.0), size=4)
        with pytest.raises(ValueError, match="below floor"):
            exact_dehaze_oracle(np.zeros((4, 4, 3)), p)


class TestSyntheticSet:
    def test_deterministic_per_seed(self):
        a = make_synthetic_set(4, 32, seed=7)
        b = make_synthetic_set(4, 32, seed=7)
        for i in range(4):
            assert np.array_equal(a[i].hazy, b[i].hazy)
            assert np.array_equal(a[i].clear, b[i].clear)
        c = make_synthetic_set(4, 32, seed=8)
        assert not np.array_equal(a[0].hazy, c[0].hazy)

    def test_count_and_size(self):
        ds = make_synthetic_set(64, 128, seed=0)
        assert len(ds) == 64
        assert ds[0].hazy.shape == (128, 128, 3)
        assert ds[0].clear.shape == (128, 128, 3)

    def test_haze_is_nontrivial(self):
        ds = make_synthetic_set(16, 64, seed=1)
        values = [psnr(ds[i].hazy, ds[i].clear) for i in range(len(ds))]
        mean = float(np.mean(values))
        assert np.isfinite(mean) and mean < 30.0

    def test_oracle_recovers_every_sample(self):
        ds = make_synthetic_set(4, 32, seed=2)
        for i in range(len(ds)):
            rec = exact_dehaze_oracle(ds[i].hazy, ds.params[i])
            assert np.abs(rec - ds[i].clear).max() < 1e-6

    def test_zero_samples_rejected(self):
        with pytest.raises(ValueError, match="n >= 1"):
            make_synthetic_set(0, 32, seed=0)


def _dummy(rng):
    return rng.uniform(0, 1, (6, 6, 3))


class TestLoaders:
    def test_flat_pairs(self, tmp_path):
        rng = np.random.default_rng(5)
        for sub in ("hazy", "clear"):
            (tmp_path / sub).mkdir()
        for name in ("b.png", "a.png"):
            save_image(_dummy(rng), tmp_path / "hazy" / name)
            save_image(_dummy(rng), tmp_path / "clear" / name)
        ds = load_dataset(tmp_path, "FLAT_PAIRS")
        assert ds.ids == ["a", "b"]  # sorted, deterministic
        assert ds[0].hazy.shape == (6, 6, 3)

    def test_flat_pairs_empty(self, tmp_path):
        (tmp_path / "hazy").mkdir()
        (tmp_path / "clear").mkdir()
        with pytest.raises(ValueError, match="zero samples"):
            load_dataset(tmp_path, "FLAT_PAIRS")

    def test_reside_maps_renditions_to_clear(self, tmp_path):
        rng = np.random.default_rng(6)
        (tmp_path / "hazy").mkdir()
        (tmp_path / "clear").mkdir()
        for name in ("1_1_0.9.png", "1_2_0.8.png", "2_1_0.7.png"):
            save_image(_dummy(rng), tmp_path / "hazy" / name)
        for name in ("1.png", "2.png"):
            save_image(_dummy(rng), tmp_path / "clear" / name)
        ds = load_dataset(tmp_path, "RESIDE_ITS")
        assert len(ds) == 3
        assert ds.ids == ["1_1_0.9", "1_2_0.8", "2_1_0.7"]

    def test_reside_missing_counterpart_skipped(self, tmp_path, caplog):
        rng = np.random.default_rng(7)
        (tmp_path / "hazy").mkdir()
        (tmp_path / "clear").mkdir()
        save_image(_dummy(rng), tmp_path / "hazy" / "1_1.png")
        save_image(_dummy(rng), tmp_path / "hazy" / "9_1.png")
        save_image(_dummy(rng), tmp_path / "clear" / "1.png")
        with caplog.at_level("WARNING"):
            ds = load_dataset(tmp_path, "RESIDE_SOTS")
        assert len(ds) == 1
        assert any("9_1" in r.message for r in caplog.records)

    def _make_ohaze(self, tmp_path, n=45):
        rng = np.random.default_rng(8)
        for i in range(n):
            save_image(_dummy(rng), tmp_path / f"{i:02d}_outdoor_hazy.png")
            save_image(_dummy(rng), tmp_path / f"{i:02d}_outdoor_GT.png")

    def test_ohaze_split(self, tmp_path):
        self._make_ohaze(tmp_path)
        assert len(load_dataset(tmp_path, "OHAZE")) == 45
        assert len(load_dataset(tmp_path, "OHAZE", split="train")) == 35
        assert len(load_dataset(tmp_path, "OHAZE", split="test")) == 10

    def test_hazerd_conditions_map_to_scenes(self, tmp_path):
        rng = np.random.default_rng(9)
        (tmp_path / "simu").mkdir()
        (tmp_path / "img").mkdir()
        for scene in range(15):
            save_image(_dummy(rng), tmp_path / "img" / f"IMG_{scene:04d}_RGB.png")
            for cond in (10, 20, 50, 100, 200):
                save_image(_dummy(rng), tmp_path / "simu" / f"IMG_{scene:04d}_{cond}.png")
        ds = load_dataset(tmp_path, "HAZERD")
        assert len(ds) == 75
        assert len({e[2] for e in ds.entries}) == 15

    def test_unknown_layout(self, tmp_path):
        with pytest.raises(ValueError, match="unknown layout"):
            load_dataset(tmp_path, "NOPE")

    def test_missing_root(self, tmp_path):
        with pytest.raises(ValueError, match="does not exist"):
            load_dataset(tmp_path / "nope", "FLAT_PAIRS")

    def test_enumeration_deterministic(self, tmp_path):
        self._make_ohaze(tmp_path, n=6)
        ids1 = load_dataset(tmp_path, "OHAZE").ids
        ids2 = load_dataset(tmp_path, "OHAZE").ids
        assert ids1 == ids2

    def test_write_flat_pairs_roundtrip(self, tmp_path):
        ds = make_synthetic_set(5, 16, seed=3)
        write_flat_pairs(ds, tmp_path)
        loaded = load_dataset(tmp_path, "FLAT_PAIRS")
        assert len(loaded) == 5
        # 8-bit quantization is the only loss
        assert np.abs(loaded[0].hazy - ds[0].hazy).max() <= 0.5 / 255 + 1e-12


class TestRandomCropPair:
    def _sample(self, size=16):
        rng = np.random.default_rng(10)
        return PairedSample(rng.uniform(0, 1, (size, size, 3)),
                            rng.uniform(0, 1, (size, size, 3)), "s")

    def test_reproducible_with_seeded_rng(self):
        s = self._sample()
        a = random_crop_pair(s, 8, np.random.default_rng(0))
        b = random_crop_pair(s, 8, np.random.default_rng(0))
        assert np.array_equal(a.hazy, b.hazy)
        assert np.array_equal(a.clear, b.clear)

    def test_identity_window_when_size_matches(self):
        s = self._sample(8)
        out = random_crop_pair(s, 8, np.random.default_rng(1), flip=False)
        assert np.array_equal(out.hazy, s.hazy)

    def test_crop_commutes_with_synthesis(self):
        rng = np.random.default_rng(11)
        clear = rng.uniform(0, 1, (16, 16, 3))
        p = HazeParams(a=rng.uniform(0.7, 1.0, 3), beta=1.0, depth=rng.uniform(0, 2, (16, 16)))
        hazy = synthesize_haze(clear, p)
        crop = random_crop_pair(PairedSample(hazy, clear, "x"), 8,
                                np.random.default_rng(2), flip=False)
        # find the window by matching the clear crop, then re-synthesize
        for y0 in range(9):
            for x0 in range(9):
                if np.array_equal(clear[y0:y0 + 8, x0:x0 + 8], crop.clear):
                    sub = HazeParams(a=p.a, beta=p.beta, depth=p.depth[y0:y0 + 8, x0:x0 + 8])
                    assert np.allclose(synthesize_haze(crop.clear, sub), crop.hazy, atol=1e-12)
                    return
        pytest.fail("crop window not found")

    def test_flip_applies_to_both(self):
        s = self._sample(8)
        # with this seed the flip branch triggers
        for seed in range(20):
            rng = np.random.default_rng(seed)
            out = random_crop_pair(s, 8, rng, flip=True)
            if not np.array_equal(out.hazy, s.hazy):
                assert np.array_equal(out.hazy, s.hazy[:, ::-1])
                assert np.array_equal(out.clear, s.clear[:, ::-1])
                return
        pytest.fail("flip never triggered across 20 seeds")

    def test_undersized_falls_back_to_resize(self, caplog):
        s = self._sample(8)
        with caplog.at_level("WARNING"):
            out = random_crop_pair(s, 12, np.random.default_rng(3))
        assert out.hazy.shape == (12, 12, 3)
        assert any("resizing" in r.message for r in caplog.records)

    def test_misaligned_pair_rejected(self):
        s = PairedSample(np.zeros((8, 8, 3)), np.zeros((10, 10, 3)), "bad")
        with pytest.raises(ValueError, match="misaligned"):
            random_crop_pair(s, 4, np.random.default_rng(0))
