import numpy as np
import pytest

from gp2depth.alignment import fit_shift_scale
from gp2depth.depthcore import Grid2D, SupervisionClass, ValidityMask
from gp2depth.geometry import DisparityAffine, depth_ratio_distortion
from gp2depth.losses import utss_loss, uts_loss
from gp2depth.rng import SplitMix64, derive_seed
from gp2depth.synthdata import (
    CorruptionError,
    EmptyDatasetError,
    MixtureSpec,
    SceneConfig,
    SceneConfigError,
    accept_stereo_frame,
    draw_index,
    generate_scene,
    load_scene,
    lr_consistency_mask,
    make_uts,
    make_utss,
    rl_consistency_mask,
    sample_mixture,
    save_scene,
    stereo_verdict,
    synthetic_stereo_pair,
)

SMALL = SceneConfig(height=24, width=20)


class TestRng:
    def test_reference_values(self):
        # SplitMix64 reference outputs for seed 0 (constants documented in gp2depth.rng)
        assert SplitMix64(0).next_uint64(3).tolist() == [
            0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_stream_is_split_invariant(self):
        a = SplitMix64(7)
        b = SplitMix64(7)
        np.testing.assert_array_equal(np.concatenate([a.random(3), a.random(4)]), b.random(7))

    def test_ranges(self):
        r = SplitMix64(1)
        u = r.random(100_000)
        assert u.min() >= 0 and u.max() < 1
        # five standard errors
        assert abs(u.mean() - 0.5) < 5 * 0.2887 / np.sqrt(u.size)
        z = r.normal(100_000)
        assert abs(z.mean()) < 5 / np.sqrt(z.size) and abs(z.std() - 1) < 0.01
        k = r.integers(3, 9000)
        assert set(np.unique(k)) == {0, 1, 2}

    def test_derive_seed_distinct(self):
        seeds = {derive_seed(0, "train", i) for i in range(1000)}
        assert len(seeds) == 1000
        assert derive_seed(0, "a") != derive_seed(0, "b")


class TestGenerateScene:
    def test_deterministic(self):
        a = generate_scene(SMALL, 42)
        b = generate_scene(SMALL, 42)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.gt_depth.values.tobytes() == b.gt_depth.values.tobytes()
        assert generate_scene(SMALL, 43).gt_depth.values.tobytes() != a.gt_depth.values.tobytes()

    def test_noiseless_channel_inverts_to_depth(self):
        cfg = SceneConfig(height=16, width=16, noise_sigma=0.0, gamma=0.75)
        s = generate_scene(cfg, 3)
        np.testing.assert_allclose(s.features[..., 0] ** (-1 / 0.75), s.gt_depth.values, rtol=1e-12)

    def test_depth_range_over_many_scenes(self):
        cfg = SceneConfig(height=16, width=16)
        depths = np.concatenate([generate_scene(cfg, s).gt_depth.values.ravel() for s in range(100)])
        assert depths.min() >= 1.0 and depths.max() <= 10.0
        assert depths.max() / depths.min() > 5

    def test_feature_layout(self):
        s = generate_scene(SMALL, 5)
        assert s.features.shape == (24, 20, 3)
        np.testing.assert_array_equal(s.features[0, :, 1], np.arange(20) / 20)
        assert s.cls is SupervisionClass.ABSOLUTE
        assert s.target is s.gt_depth

    @pytest.mark.parametrize("kwargs", [dict(height=8), dict(depth_range=(0.0, 5.0)),
                                        dict(depth_range=(3.0, 2.0)), dict(region_grid=(0, 1))])
    def test_invalid_config(self, kwargs):
        with pytest.raises(SceneConfigError):
            SceneConfig(**kwargs)


class TestCorruption:
    def test_uts_identity_draw(self):
        s = generate_scene(SMALL, 1)
        u = make_uts(s, 1, k=1.0)
        np.testing.assert_array_equal(u.target.values, s.gt_depth.values)
        assert u.cls is SupervisionClass.UTS

    def test_uts_range_and_ratios(self):
        s = generate_scene(SMALL, 1)
        for seed in range(50):
            u = make_uts(s, seed)
            k = u.corruption["k"]
            assert 0.25 <= k <= 4.0
            ratio_before = s.gt_depth.values / s.gt_depth.values[0, 0]
            ratio_after = u.target.values / u.target.values[0, 0]
            np.testing.assert_allclose(ratio_after, ratio_before, rtol=1e-13)
            assert u.gt_depth is s.gt_depth

    def test_uts_perfect_prediction_zero_loss(self):
        s = generate_scene(SMALL, 2)
        u = make_uts(s, 9)
        assert uts_loss(Grid2D(np.log(s.gt_depth.values)), u.target).value == pytest.approx(0.0, abs=1e-12)

    def test_utss_identity_draw(self):
        s = generate_scene(SMALL, 1)
        u = make_utss(s, 1, a=1.0, b=0.0)
        np.testing.assert_array_equal(u.target.values, 1.0 / s.gt_depth.values)

    def test_utss_recovers_affine_parameters(self):
        s = generate_scene(SMALL, 3)
        for seed in range(30):
            u = make_utss(s, seed)
            a, b = u.corruption["a"], u.corruption["b"]
            assert u.target.values.min() > 0.01
            fit = fit_shift_scale((1.0 / s.gt_depth.values).ravel(), u.target.values.ravel())
            assert fit.scale == pytest.approx(a, abs=1e-9)
            assert fit.shift == pytest.approx(b, abs=1e-9)

    def test_utss_perfect_prediction_zero_loss(self):
        s = generate_scene(SMALL, 4)
        for seed in range(10):
            u = make_utss(s, seed)
            assert utss_loss(Grid2D(np.log(s.gt_depth.values)), u.target).value == pytest.approx(0.0, abs=1e-9)

    def test_utss_shift_changes_a_depth_ratio(self):
        s = generate_scene(SMALL, 5)
        u = make_utss(s, 11)
        assert u.corruption["b"] != 0
        d = s.gt_depth.values.ravel()
        z1, z2 = d.min(), d.max()
        t = DisparityAffine(u.corruption["a"], u.corruption["b"])
        assert depth_ratio_distortion(z1, z2, t) > 0

    def test_wrong_class(self):
        u = make_uts(generate_scene(SMALL, 1), 1)
        with pytest.raises(CorruptionError):
            make_uts(u, 2)
        with pytest.raises(CorruptionError):
            make_utss(u, 2)

    def test_unsatisfiable_positivity(self):
        with pytest.raises(CorruptionError):
            make_utss(generate_scene(SMALL, 1), 1, a=1.0, b=-5.0)


def test_scene_storage_round_trip(tmp_path):
    s = make_utss(generate_scene(SMALL, 8), 8)
    save_scene(s, tmp_path / "scene")
    back = load_scene(tmp_path / "scene")
    assert back.cls is SupervisionClass.UTSS and back.seed == 8
    assert back.corruption == s.corruption
    np.testing.assert_array_equal(back.features, s.features.astype(np.float32))
    np.testing.assert_array_equal(back.target.values, s.target.values.astype(np.float32))
    save_scene(back, tmp_path / "again")
    for f in sorted((tmp_path / "scene").iterdir()):
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()


# -- stereo ----------------------------------------------------------------------------

def _occlusion_oracle(h, w, bg, fg, rect, max_disc=8):
    """Per-pixel visibility from the generating geometry (no array lookups)."""
    u0, v0, u1, v1 = rect
    valid = 0
    for v in range(h):
        for u in range(w):
            in_fg = v0 <= v < v1 and u0 <= u < u1
            d = fg if in_fg else bg
            ur = u - d
            if not 0 <= ur < w:
                continue
            # what the right camera sees at (ur, v)
            covered = v0 <= v < v1 and u0 - fg <= ur < u1 - fg
            seen = fg if covered else bg
            valid += abs(d - seen) < max_disc
    return valid


class TestStereo:
    def test_self_consistent_constant(self):
        d = Grid2D(np.full((10, 30), 5.0))
        m = lr_consistency_mask(d, d)
        assert m.bits[:, :5].sum() == 0
        assert m.bits[:, 5:].all()

    def test_inconsistent_pair(self):
        m = lr_consistency_mask(Grid2D(np.full((10, 30), 5.0)), Grid2D(np.full((10, 30), 20.0)))
        assert m.count == 0

    @pytest.mark.parametrize("rect", [(20, 5, 40, 25), (2, 0, 15, 30), (45, 10, 64, 20)])
    def test_two_plane_occlusion_band(self, rect):
        h, w, bg, fg = 30, 64, 4, 12
        left, right = synthetic_stereo_pair(h, w, bg, fg, rect)
        m = lr_consistency_mask(left, right)
        assert m.count == _occlusion_oracle(h, w, bg, fg, rect)

    def test_discrepancy_threshold_is_strict(self):
        left = Grid2D(np.full((2, 20), 5.0))
        assert lr_consistency_mask(left, Grid2D(np.full((2, 20), 13.0))).count == 0
        assert lr_consistency_mask(left, Grid2D(np.full((2, 20), 12.99))).count == 30

    def test_round_half_up_lookup(self):
        left = Grid2D(np.full((1, 10), 2.5))
        r = np.zeros((1, 10))
        r[0, 0] = 2.5
        m = lr_consistency_mask(left, Grid2D(r), max_discrepancy=0.1)
        # u - round(2.5) = u - 3: only u = 3 lands on right pixel 0
        assert np.flatnonzero(m.bits).tolist() == [3]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lr_consistency_mask(Grid2D(np.ones((2, 3))), Grid2D(np.ones((3, 2))))

    def test_left_and_right_anchored_agree_without_occlusion(self):
        # slanted plane, disparity depends on the row only: no occlusions
        h, w = 40, 120
        d = np.repeat(np.linspace(3.0, 20.0, h)[:, None], w, axis=1)
        left_m = lr_consistency_mask(Grid2D(d), Grid2D(d)).bits
        right_m = rl_consistency_mask(Grid2D(d), Grid2D(d)).bits
        # compare each left pixel with its corresponding right pixel
        step = np.floor(d + 0.5).astype(int)
        u = np.arange(w)[None, :] - step
        inside = (u >= 0) & (u < w)
        rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
        agree = left_m[inside] == right_m[rows[inside], u[inside]]
        assert agree.mean() > 0.99

    def test_accept_wide_range(self):
        disp = Grid2D(np.linspace(2, 30, 100).reshape(10, 10))
        assert accept_stereo_frame(disp, ValidityMask.all_valid(10, 10))

    def test_reject_constant(self):
        disp = Grid2D(np.full((10, 10), 5.0))
        assert stereo_verdict(disp, ValidityMask.all_valid(10, 10)) == "rejected: range"

    def test_reject_low_validity(self):
        disp = Grid2D(np.linspace(2, 30, 100).reshape(10, 10))
        bits = np.zeros(100, bool)
        bits[:79] = True
        assert stereo_verdict(disp, bits.reshape(10, 10)) == "rejected: validity"

    def test_thresholds_are_strict(self):
        disp = Grid2D(np.array([[0.0, 8.0, 4.0, 4.0, 4.0]]))
        assert stereo_verdict(disp, np.ones((1, 5), bool)) == "rejected: range"
        bits = np.array([[True, True, True, True, False]])
        assert stereo_verdict(Grid2D([[0.0, 9.0, 4.0, 4.0, 4.0]]), bits) == "rejected: validity"

    def test_empty_mask_rejected(self):
        assert not accept_stereo_frame(Grid2D(np.ones((3, 3))), np.zeros((3, 3), bool))


class TestMixture:
    def _datasets(self, sizes):
        base = generate_scene(SceneConfig(height=16, width=16), 0)
        return [(f"d{i}", [base] * n) for i, n in enumerate(sizes)]

    def _frequencies(self, sizes, draws=10_000, seed=123):
        spec = MixtureSpec(self._datasets(sizes))
        rng = SplitMix64(seed)
        counts = np.zeros(len(sizes))
        for _ in range(draws):
            i, _ = draw_index(spec, rng)
            counts[i] += 1
        return counts / draws

    def test_single_dataset(self):
        spec = MixtureSpec(self._datasets([3]))
        rng = SplitMix64(0)
        assert all(sample_mixture(spec, rng) is spec.datasets[0][1][0] for _ in range(20))

    def test_unequal_sizes_equal_probability(self):
        f = self._frequencies([1, 999])
        assert abs(f[0] - 0.5) < 0.02

    def test_three_datasets(self):
        f = self._frequencies([5, 50, 500])
        np.testing.assert_allclose(f, 1 / 3, atol=0.02)

    def test_deterministic(self):
        spec = MixtureSpec(self._datasets([2, 3]))
        r1, r2 = SplitMix64(9), SplitMix64(9)
        assert [draw_index(spec, r1) for _ in range(50)] == [draw_index(spec, r2) for _ in range(50)]

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            MixtureSpec([])
        with pytest.raises(EmptyDatasetError):
            MixtureSpec([("a", [])])
