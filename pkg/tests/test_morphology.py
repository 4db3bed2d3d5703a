import numpy as np
import pytest

from shared.exceptions import DatasetError
from consent.modules import morphology
from consent.modules.morphology import ImageThicknessStats, ThicknessProfile


def white(h, w):
    return np.full((h, w), 255, dtype=np.uint8)


def profiles(*means):
    return ImageThicknessStats([ThicknessProfile(np.array([m], dtype=float), i) for i, m in enumerate(means)])


def brute_force_sq_distance(bits):
    padded = np.pad(bits, 1)
    background = np.argwhere(~padded)
    out = np.zeros(bits.shape)
    for r, c in np.argwhere(bits):
        d = background - np.array([r + 1, c + 1])
        out[r, c] = (d * d).sum(axis=1).min()
    return out


class TestBinarize:
    def test_constant_patch_is_degenerate(self):
        mask = morphology.binarize(white(5, 7))
        assert mask.degenerate
        assert not mask.bits.any()

    def test_dark_letters_on_light_paper(self):
        patch = white(10, 10)
        patch[4:6, 2:8] = 20
        mask = morphology.binarize(patch)
        assert not mask.light_foreground
        assert mask.bits.sum() == 12
        assert mask.bits[4:6, 2:8].all()

    def test_light_letters_on_dark_paper(self):
        patch = np.full((10, 10), 10, dtype=np.uint8)
        patch[1:3, 1:9] = 240
        mask = morphology.binarize(patch)
        assert mask.light_foreground
        assert mask.bits.sum() == 16

    def test_rgb_input(self):
        patch = np.full((6, 6, 3), 250, dtype=np.uint8)
        patch[2, :, :] = (10, 10, 10)
        np.testing.assert_array_equal(morphology.binarize(patch).bits[2], np.ones(6, dtype=bool))


class TestSkeletonize:
    def test_thin_line_unchanged(self):
        bits = np.zeros((9, 7), dtype=bool)
        bits[2:7, 3] = True
        np.testing.assert_array_equal(morphology.skeletonize(bits), bits)

    def test_empty_stays_empty(self):
        assert not morphology.skeletonize(np.zeros((4, 4), dtype=bool)).any()

    def test_three_pixel_bar(self):
        bits = np.ones((10, 3), dtype=bool)
        expected = np.zeros((10, 3), dtype=bool)
        expected[1:8, 1] = True
        np.testing.assert_array_equal(morphology.skeletonize(bits), expected)

    def test_subset_and_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            bits = np.zeros((16, 16), dtype=bool)
            for _ in range(3):
                r, c = rng.integers(0, 12, 2)
                bits[r:r + rng.integers(2, 5), c:c + rng.integers(2, 5)] = True
            skeleton = morphology.skeletonize(bits)
            assert not (skeleton & ~bits).any()
            np.testing.assert_array_equal(morphology.skeletonize(skeleton), skeleton)


class TestDistanceTransform:
    def test_single_pixel(self):
        np.testing.assert_array_equal(morphology.distance_transform(np.ones((1, 1), dtype=bool)), [[1.0]])

    def test_three_by_three(self):
        dist = morphology.distance_transform(np.ones((3, 3), dtype=bool))
        np.testing.assert_array_equal(dist, [[1, 1, 1], [1, 2, 1], [1, 1, 1]])

    def test_background_is_zero(self):
        bits = np.zeros((4, 5), dtype=bool)
        bits[1:3, 1:4] = True
        assert (morphology.distance_transform(bits)[~bits] == 0).all()

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            bits = rng.random((rng.integers(1, 33), rng.integers(1, 33))) < 0.6
            np.testing.assert_array_equal(morphology.squared_distance_transform(bits), brute_force_sq_distance(bits))

    def test_page_sized_filled_mask(self):
        height, width = 60, 500
        rows, cols = np.indices((height, width))
        expected = np.minimum.reduce([rows + 1, height - rows, cols + 1, width - cols]) ** 2
        np.testing.assert_array_equal(morphology.squared_distance_transform(np.ones((height, width), dtype=bool)),
                                      expected)


class TestThickness:
    def test_bar_of_width_three(self):
        patch = white(14, 9)
        patch[2:12, 3:6] = 0
        profile = morphology.thickness(patch)
        assert not profile.empty
        np.testing.assert_array_equal(profile.samples, np.full(7, 2.0))

    def test_one_pixel_line(self):
        patch = white(10, 7)
        patch[2:8, 3] = 0
        assert profile_mean(patch) == 1.0

    def test_blank_patch(self):
        profile = morphology.thickness(white(8, 8), word_index=3)
        assert profile.empty and profile.degenerate
        assert profile.word_index == 3
        assert np.isnan(profile.mean)


def profile_mean(patch):
    return morphology.thickness(patch).mean


class TestVote:
    def test_uniform_thickness_is_all_regular(self):
        np.testing.assert_array_equal(morphology.vote(profiles(2, 2, 2)), [0, 0, 0])

    def test_single_outlier(self):
        stats = profiles(*([2.0] * 9 + [5.0]))
        assert stats.median == 2.0
        assert stats.sigma == pytest.approx(0.9)
        np.testing.assert_array_equal(morphology.vote(stats, alpha=1.0), [0] * 9 + [1])

    def test_infinite_alpha(self):
        assert not morphology.vote(profiles(*([2.0] * 9 + [5.0])), alpha=np.inf).any()

    def test_zero_alpha_marks_above_median(self):
        np.testing.assert_array_equal(morphology.vote(profiles(1, 2, 3, 4, 5), alpha=0.0), [0, 0, 0, 1, 1])

    def test_shift_invariant(self):
        means = [1.5, 2.0, 2.0, 2.5, 4.0, 1.0]
        base = morphology.vote(profiles(*means), alpha=0.5)
        shifted = morphology.vote(profiles(*[m + 3.0 for m in means]), alpha=0.5)
        np.testing.assert_array_equal(base, shifted)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            stats = profiles(*rng.uniform(1.0, 6.0, 12))
            previous = morphology.vote(stats, alpha=0.0)
            for alpha in (0.25, 0.5, 1.0, 2.0):
                current = morphology.vote(stats, alpha=alpha)
                assert not (current & ~previous.astype(bool)).any()
                previous = current

    def test_empty_profiles_vote_regular(self):
        stats = ImageThicknessStats([ThicknessProfile(np.array([2.0]), 0), ThicknessProfile(np.empty(0), 1),
                                     ThicknessProfile(np.array([9.0]), 2)])
        assert morphology.vote(stats, alpha=0.0)[1] == 0

    def test_all_empty_is_unusable(self):
        stats = ImageThicknessStats([ThicknessProfile(np.empty(0), 0)])
        with pytest.raises(DatasetError):
            morphology.vote(stats)

    def test_word_means_sigma(self):
        stats = ImageThicknessStats([ThicknessProfile(np.array([1.0, 3.0]), 0),
                                     ThicknessProfile(np.array([2.0, 2.0]), 1)], sigma_mode='word_means')
        assert stats.sigma == 0.0

    def test_classify_image_falls_back_to_regular(self):
        np.testing.assert_array_equal(morphology.classify_image([white(6, 6), white(5, 9)]), [0, 0])
