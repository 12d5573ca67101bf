from collections import namedtuple

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmadapt.errors import DataError
from hmadapt.histmatch import (Cdf, CorpusCdfSpec, HmLut, apply_hm, average_cdf, build_hm_lut,
                               compute_cdf, inverse_cdf, ks_distance, load_json, save_json)
from hmadapt.imaging import Image2D, Volume3D, mip

from oracles import histogram_cdf, lut_bruteforce

Rec = namedtuple("Rec", "class4 image")


def random_cdf(rng, levels, zero_frac=0.3):
    counts = rng.integers(1, 100, levels).astype(float)
    counts[rng.random(levels) < zero_frac] = 0
    if counts.sum() == 0:
        counts[rng.integers(levels)] = 1
    return Cdf(np.cumsum(counts) / counts.sum())


def smooth_image(rng, size=256, a=2.0, b=5.0, levels=4096):
    return Image2D((rng.beta(a, b, (size, size)) * (levels - 1)).astype(int), levels)


class TestCdf:
    def test_validation(self):
        with pytest.raises(ValueError):
            Cdf([0.5, 0.4, 1.0])
        with pytest.raises(ValueError):
            Cdf([0.2, 0.9])

    def test_constant_image_step(self):
        c = compute_cdf(Image2D(np.full((3, 3), 5), 16))
        assert c.values.tolist() == [0.0] * 5 + [1.0] * 11

    def test_two_pixels(self):
        c = compute_cdf(Image2D(np.array([[0, 4095]]), 4096))
        assert c.values[0] == 0.5 and c.values[4094] == 0.5 and c.values[4095] == 1.0

    def test_enumerated_counts(self, rng):
        px = rng.integers(0, 8, (4, 4))
        c = compute_cdf(Image2D(px, 8))
        assert c.values.tolist() == histogram_cdf(px.ravel().tolist(), 8)

    def test_mask(self):
        im = Image2D(np.array([[0, 3], [3, 1]]), 4)
        c = compute_cdf(im, np.array([[False, True], [True, True]]))
        assert c.values.tolist() == pytest.approx([0, 1 / 3, 1 / 3, 1])


class TestAverageCdf:
    def loader(self, r):
        return r.image

    def test_identical_images(self, rng):
        im = Image2D(rng.integers(0, 16, (4, 4)), 16)
        recs = [Rec(c, im) for c in ("normal", "benign", "malignant") for _ in range(2)]
        spec = CorpusCdfSpec({"normal": 2, "benign": 2, "malignant": 2})
        out = average_cdf(recs, spec, rng, self.loader, levels=None)
        np.testing.assert_array_equal(out.values, compute_cdf(im).values)

    def test_two_constant_levels(self, rng):
        a = Image2D(np.full((2, 2), 3), 10)
        b = Image2D(np.full((5, 3), 7), 10)
        out = average_cdf([Rec("normal", a), Rec("benign", b)],
                          CorpusCdfSpec({"normal": 1, "benign": 1}), rng, self.loader, levels=None)
        assert out.values.tolist() == [0, 0, 0, 0.5, 0.5, 0.5, 0.5, 1, 1, 1]

    def test_per_bin_mean(self, rng):
        ims = [Image2D(rng.integers(0, 6, shape), 6) for shape in [(2, 3), (4, 4), (3, 1)]]
        recs = [Rec(c, im) for c, im in zip(("normal", "benign", "malignant"), ims)]
        spec = CorpusCdfSpec({"normal": 1, "benign": 1, "malignant": 1})
        out = average_cdf(recs, spec, rng, self.loader, levels=None)
        per_image = [histogram_cdf(im.pixels.ravel().tolist(), 6) for im in ims]
        expected = [sum(col) / 3 for col in zip(*per_image)]
        np.testing.assert_allclose(out.values, expected, rtol=0, atol=1e-15)

    def test_quota_sampling_is_class_balanced(self, rng):
        ims = {c: Image2D(np.full((1, 1), v), 4) for c, v in [("normal", 0), ("benign", 1), ("malignant", 2)]}
        recs = [Rec(c, ims[c]) for c in ims for _ in range(5)] + [Rec("high_risk", ims["normal"])]
        out = average_cdf(recs, CorpusCdfSpec({"normal": 2, "benign": 2, "malignant": 2}), rng,
                          self.loader, levels=None)
        assert out.values.tolist() == pytest.approx([1 / 3, 2 / 3, 1, 1])

    def test_insufficient_class(self, rng):
        recs = [Rec("normal", Image2D(np.zeros((1, 1), int), 4))]
        with pytest.raises(DataError):
            average_cdf(recs, CorpusCdfSpec({"normal": 1, "malignant": 1}), rng, self.loader)

    def test_rescales_to_common_grid(self, rng):
        im = Image2D(np.array([[0, 1023]]), 1024)
        out = average_cdf([Rec("normal", im)], CorpusCdfSpec({"normal": 1}), rng, self.loader)
        assert out.levels == 4096 and out.values[4094] == 0.5


class TestBuildLut:
    def test_self_match_identity(self, rng):
        counts = rng.integers(1, 50, 64)
        f = Cdf(np.cumsum(counts) / counts.sum())
        assert build_hm_lut(f, f).table.tolist() == list(range(64))

    def test_step_reference(self, rng):
        c = 9
        f_r = Cdf(np.r_[np.zeros(c), np.ones(16 - c)])
        lut = build_hm_lut(random_cdf(rng, 16, 0.0), f_r)
        assert lut.table.max() <= c and lut.table[-1] == c

    def test_four_level_example(self):
        f_s = Cdf([0.25, 0.5, 0.75, 1.0])
        f_r = Cdf([0.1, 0.4, 0.9, 1.0])
        lut = build_hm_lut(f_s, f_r)
        assert lut.table.tolist() == lut_bruteforce(f_s.values.tolist(), f_r.values.tolist())

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(2, 40))
    def test_matches_bruteforce(self, seed, k, levels):
        r = np.random.default_rng(seed)
        f_s, f_r = random_cdf(r, k), random_cdf(r, levels)
        lut = build_hm_lut(f_s, f_r)
        assert lut.table.tolist() == lut_bruteforce(f_s.values.tolist(), f_r.values.tolist())
        assert np.all(np.diff(lut.table) >= 0)

    def test_flat_reference_picks_smallest_level(self):
        f_r = Cdf([0.0, 0.5, 0.5, 0.5, 1.0])
        assert inverse_cdf(f_r, np.array([0.5]))[0] == 1.0

    def test_quantile_below_first_level(self):
        f_r = Cdf([0.3, 0.6, 1.0])
        np.testing.assert_array_equal(inverse_cdf(f_r, np.array([0.0, 0.1, 0.3])), [0, 0, 0])


class TestApplyHm:
    def test_identity(self, rng):
        im = Image2D(rng.integers(0, 4096, (5, 5)), 4096)
        assert apply_hm(im, HmLut.identity(4096)) == im

    def test_constant(self):
        lut = HmLut(np.array([0, 2, 2, 3]), 4)
        assert apply_hm(Image2D(np.full((2, 2), 1), 4), lut).pixels.tolist() == [[2, 2], [2, 2]]

    def test_enumerated_lookup(self):
        lut = build_hm_lut(Cdf([0.25, 0.5, 0.75, 1.0]), Cdf([0.1, 0.4, 0.9, 1.0]))
        px = [[0, 1, 2], [3, 2, 1], [0, 0, 3]]
        out = apply_hm(Image2D(np.array(px), 4), lut)
        table = lut.table.tolist()
        assert out.pixels.tolist() == [[table[v] for v in row] for row in px]

    def test_cross_depth(self):
        lut = HmLut(np.array([0, 100, 4095]), 4096)
        out = apply_hm(Image2D(np.array([[2, 1]]), 3), lut)
        assert out.levels == 4096 and out.pixels.tolist() == [[4095, 100]]

    def test_depth_mismatch(self):
        with pytest.raises(ValueError):
            apply_hm(Image2D(np.zeros((1, 1), int), 8), HmLut.identity(4))


class TestKs:
    def test_equal(self, rng):
        c = random_cdf(rng, 10)
        assert ks_distance(c, c) == 0.0

    def test_opposite_steps(self):
        assert ks_distance(Cdf([1.0, 1.0, 1.0]), Cdf([0.0, 0.0, 1.0])) == 1.0

    def test_enumerated(self):
        a, b = [0.1, 0.5, 0.6, 1.0], [0.3, 0.35, 0.9, 1.0]
        assert ks_distance(Cdf(a), Cdf(b)) == max(abs(x - y) for x, y in zip(a, b))

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            ks_distance(Cdf([1.0]), Cdf([0.0, 1.0]))


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_mip_commutes_with_hm(self, seed):
        r = np.random.default_rng(seed)
        vol = Volume3D.from_array(r.integers(0, 64, (int(r.integers(1, 5)), 6, 7)), 64)
        lut = build_hm_lut(random_cdf(r, 64), random_cdf(r, 128))
        assert apply_hm(mip(vol), lut) == mip([apply_hm(s, lut) for s in vol.slices])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_self_match_within_one_level(self, seed):
        r = np.random.default_rng(seed)
        im = Image2D(r.integers(0, 300, (20, 20)), 300)
        f = compute_cdf(im)
        out = apply_hm(im, build_hm_lut(f, f))
        assert np.abs(out.pixels.astype(int) - im.pixels.astype(int)).max() <= 1

    def test_shift_reduction(self, rng):
        im = smooth_image(rng, a=2.0, b=5.0)
        f_r = compute_cdf(smooth_image(rng, a=5.0, b=2.0))
        before = ks_distance(compute_cdf(im), f_r)
        after = ks_distance(compute_cdf(apply_hm(im, build_hm_lut(compute_cdf(im), f_r))), f_r)
        assert after <= before and after <= 0.02

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_lut_monotone(self, seed):
        r = np.random.default_rng(seed)
        lut = build_hm_lut(random_cdf(r, int(r.integers(2, 300))), random_cdf(r, int(r.integers(2, 300))))
        assert np.all(np.diff(lut.table) >= 0)


def test_json_roundtrip(tmp_path, rng):
    c = random_cdf(rng, 4096)
    save_json(tmp_path / "c.json", c)
    back = load_json(tmp_path / "c.json")
    np.testing.assert_array_equal(back.values, c.values)
    lut = build_hm_lut(c, random_cdf(rng, 4096))
    save_json(tmp_path / "l.json", lut)
    assert load_json(tmp_path / "l.json").table.tolist() == lut.table.tolist()
