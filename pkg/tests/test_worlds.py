import numpy as np
import pytest

from weakprior_core.core_model import RngHandle
from weakprior_core.errors import InvalidArgumentError
from weakprior_core.forward_ops import make_block_average, make_box_mask
from weakprior_core.worlds import (MEAN_LIMIT, hidden_shift_prior, make_image_world, min_separation, nearest_mode,
                                   reweighted_prior, sample_world, shifted_prior, smooth_field, world_dataset)

SHAPE = (16, 16, 3)


@pytest.fixture
def world():
    return make_image_world(SHAPE, 4, 0.1, RngHandle(0), separation=0.05)


class TestImageWorld:
    def test_smooth_field_shape_and_range(self, rng):
        f = smooth_field(SHAPE, rng)
        assert f.shape == (768,)
        assert np.all(np.abs(f) <= MEAN_LIMIT)

    def test_smooth_field_is_smooth(self, rng):
        img = smooth_field(SHAPE, rng).reshape(SHAPE)
        noise = rng.uniform(SHAPE) * 1.6 - 0.8
        assert np.abs(np.diff(img, axis=0)).mean() < np.abs(np.diff(noise, axis=0)).mean() / 2

    def test_world_means_and_separation(self, world):
        assert world.means.shape == (4, 768)
        assert np.all(np.abs(world.means) <= MEAN_LIMIT)
        assert min_separation(world.means) >= 0.05
        np.testing.assert_allclose(world.tau2, 0.01)
        np.testing.assert_allclose(world.weights, 0.25)

    def test_impossible_separation(self):
        with pytest.raises(InvalidArgumentError):
            make_image_world((4, 4, 1), 3, 0.1, RngHandle(0), separation=10.0)

    def test_single_mean_has_infinite_separation(self):
        assert min_separation(np.zeros((1, 5))) == np.inf

    def test_samples_are_clipped(self):
        prior = make_image_world(SHAPE, 2, 1.0, RngHandle(1))
        images, labels = sample_world(prior, RngHandle(2), 20)
        assert images.shape == (20, 768)
        assert images.min() == -1.0 and images.max() == 1.0
        assert set(labels) <= {0, 1}

    def test_dataset(self, world):
        data = world_dataset(world, SHAPE, RngHandle(3), 5, label="w")
        assert len(data) == 5
        assert data.shape == SHAPE
        assert data.label == "w"


class TestMismatchedPriors:
    def test_reweighted_ratio_bounded(self, world):
        for seed in range(20):
            prior = reweighted_prior(world, 4.0, RngHandle(seed))
            assert prior.weight_ratio_constant() <= 4.0 + 1e-12
            np.testing.assert_array_equal(prior.means, world.means)

    def test_reweighted_c_one_is_uniform(self, world):
        np.testing.assert_allclose(reweighted_prior(world, 1.0, RngHandle(0)).weights, 0.25)

    def test_reweighted_rejects_small_c(self, world):
        with pytest.raises(InvalidArgumentError):
            reweighted_prior(world, 0.5, RngHandle(0))

    def test_shift_amplitude(self, world):
        shifted = shifted_prior(world, SHAPE, RngHandle(4), 0.3)
        delta = np.abs(shifted.means - world.means)
        assert delta.max() <= 0.3 + 1e-12
        assert delta.max() > 0.0
        assert np.all(np.abs(shifted.means) <= 1.0)
        np.testing.assert_array_equal(shifted.weights, world.weights)
        np.testing.assert_array_equal(shifted.tau2, world.tau2)

    def test_nearest_mode(self, world, rng):
        for j in range(world.M):
            assert nearest_mode(world, world.means[j] + 0.01 * rng.normal(world.n)) == j

    def test_hidden_shift_lives_inside_the_box(self, world):
        op = make_box_mask(SHAPE, 0.5)
        shifted = hidden_shift_prior(world, op, SHAPE, RngHandle(5), 0.2)
        delta = shifted.means - world.means
        np.testing.assert_array_equal(op.apply(delta), 0.0)
        inside = np.setdiff1d(np.arange(world.n), op.indices)
        np.testing.assert_allclose(np.abs(delta[:, inside]), 0.2, atol=1e-12)
        np.testing.assert_array_equal(shifted.weights, world.weights)

    def test_hidden_shift_grows_with_blind_area(self, world):
        sizes = []
        for frac in (0.3, 0.4, 0.5, 0.6):
            shifted = hidden_shift_prior(world, make_box_mask(SHAPE, frac), SHAPE, RngHandle(6), 0.2)
            sizes.append(float(np.sum((shifted.means - world.means) ** 2)))
        assert sizes == sorted(sizes)
        coarse = [hidden_shift_prior(world, make_block_average(SHAPE, f), SHAPE, RngHandle(6), 0.2)
                  for f in (4, 8)]
        gaps = [float(np.sum((p.means - world.means) ** 2)) for p in coarse]
        assert gaps[1] > gaps[0]

    def test_hidden_shift_dimension_checked(self, world):
        with pytest.raises(InvalidArgumentError):
            hidden_shift_prior(world, make_box_mask((8, 8, 3), 0.5), SHAPE, RngHandle(0), 0.2)
