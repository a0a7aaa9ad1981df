import numpy as np
import pytest

from weakprior_core.core_model import RngHandle
from weakprior_core.errors import InvalidArgumentError
from weakprior_core.forward_ops import (BlockAverage, CoordinateMask, DenseSpd, Observation, ScaledIdentity,
                                        box_side, gaussian_kernel, identity, make_block_average, make_box_mask,
                                        make_gaussian_blur, make_random_dense, make_random_mask, null_space_part,
                                        observe, operator_from_descriptor)

SHAPE = (8, 8, 3)


def _operators():
    rng = RngHandle(11)
    mask = make_random_mask(SHAPE, 0.3, rng)
    return {
        "random_mask": mask,
        "box_mask": make_box_mask(SHAPE, 0.5),
        "block_average": make_block_average(SHAPE, 2),
        "blur": make_gaussian_blur(SHAPE, 5, 1.5),
        "dense": make_random_dense(20, 192, rng),
        "row_subset": make_block_average(SHAPE, 2).rows([0, 3, 5, 7, 40]),
    }


@pytest.mark.parametrize("name", sorted(_operators()))
class TestOperatorContract:
    def test_adjoint_identity(self, name):
        op = _operators()[name]
        rng = RngHandle(5)
        for _ in range(5):
            x, v = rng.normal(op.n), rng.normal(op.m)
            assert float(op.apply(x) @ v) == pytest.approx(float(x @ op.adjoint(v)), rel=1e-12, abs=1e-12)

    def test_to_dense_matches_apply(self, name):
        op = _operators()[name]
        x = RngHandle(6).normal(op.n)
        np.testing.assert_allclose(op.to_dense() @ x, op.apply(x), atol=1e-12)

    def test_aat_structure_matches_dense(self, name):
        op = _operators()[name]
        a = op.to_dense()
        aat = op.aat_structure()
        want = a @ a.T
        if isinstance(aat, ScaledIdentity):
            np.testing.assert_allclose(want, aat.c * np.eye(op.m), atol=1e-12)
        else:
            np.testing.assert_allclose(aat.matrix, want, atol=1e-12)

    def test_batch_apply_matches_rows(self, name):
        op = _operators()[name]
        xs = RngHandle(8).normal((3, op.n))
        np.testing.assert_allclose(op.apply(xs), np.stack([op.apply(x) for x in xs]), atol=1e-12)

    def test_length_checked(self, name):
        op = _operators()[name]
        with pytest.raises(InvalidArgumentError):
            op.apply(np.zeros(op.n + 1))

    def test_null_space_part_is_unseen(self, name):
        op = _operators()[name]
        v = RngHandle(9).normal(op.n)
        p = null_space_part(op, v)
        np.testing.assert_allclose(op.apply(p), 0.0, atol=1e-4)
        np.testing.assert_allclose(null_space_part(op, p), p, atol=1e-4)
        assert float(np.linalg.norm(p)) <= float(np.linalg.norm(v)) + 1e-9


class TestMasks:
    def test_random_mask_keeps_whole_pixels(self, rng):
        mask = make_random_mask(SHAPE, 0.3, rng)
        assert mask.m == round(0.3 * 64) * 3
        pixels = mask.indices.reshape(-1, 3) // 3
        assert np.all(pixels == pixels[:, :1])

    def test_random_mask_fraction_range(self, rng):
        for bad in (0.0, 1.5):
            with pytest.raises(InvalidArgumentError):
                make_random_mask(SHAPE, bad, rng)

    def test_mask_aat_is_identity(self, rng):
        assert make_random_mask(SHAPE, 0.5, rng).aat_structure() == ScaledIdentity(1.0)

    def test_box_side_and_count(self):
        box = make_box_mask((16, 16, 3), 0.3)
        assert box_side((16, 16, 3), 0.3) == 5
        assert box.m == (256 - 25) * 3
        top, left, side = box.box
        assert (top, left, side) == (5, 5, 5)

    def test_box_fraction_zero_observes_everything(self):
        assert make_box_mask(SHAPE, 0.0).m == 192

    def test_full_box_rejected(self):
        with pytest.raises(InvalidArgumentError):
            make_box_mask(SHAPE, 1.0)

    def test_mask_indices_validated(self):
        with pytest.raises(InvalidArgumentError):
            CoordinateMask([3, 1], 5)
        with pytest.raises(InvalidArgumentError):
            CoordinateMask([0, 5], 5)


class TestBlockAverage:
    def test_aat_is_exactly_inverse_block_size(self):
        op = make_block_average((16, 16, 3), 4)
        assert op.k == 16
        aat = op.aat_structure()
        assert isinstance(aat, ScaledIdentity)
        assert aat.c == 1.0 / 16

    def test_measurement_count(self):
        assert make_block_average((64, 64, 3), 16).m == 48

    def test_block_means(self):
        img = np.arange(16, dtype=float).reshape(4, 4, 1)
        y = BlockAverage((4, 4, 1), 2).apply(img.reshape(-1))
        np.testing.assert_allclose(y, [2.5, 4.5, 10.5, 12.5])

    def test_factor_must_divide(self):
        with pytest.raises(InvalidArgumentError):
            make_block_average((6, 6, 1), 4)


class TestBlur:
    def test_kernel_normalized(self):
        k = gaussian_kernel(61, 3.0)
        assert k.shape == (61, 61)
        assert k.sum() == pytest.approx(1.0)

    def test_even_kernel_rejected(self):
        with pytest.raises(InvalidArgumentError):
            gaussian_kernel(4, 1.0)

    def test_constant_image_preserved(self):
        op = make_gaussian_blur(SHAPE, 7, 2.0)
        np.testing.assert_allclose(op.apply(np.full(op.n, 0.3)), 0.3, atol=1e-12)

    def test_kernel_wider_than_image(self):
        op = make_gaussian_blur((4, 4, 1), 9, 3.0)
        np.testing.assert_allclose(op.apply(np.ones(16)), 1.0, atol=1e-12)

    def test_channels_do_not_mix(self):
        op = make_gaussian_blur((4, 4, 2), 3, 1.0)
        x = np.zeros(32)
        x[0::2] = 1.0
        y = op.apply(x)
        np.testing.assert_allclose(y[1::2], 0.0)


class TestMeasurement:
    def test_noise_free_observation(self, rng):
        op = make_random_dense(4, 6, rng)
        x = rng.normal(6)
        obs = observe(op, x, 0.0, rng)
        np.testing.assert_array_equal(obs.y, op.apply(x))

    def test_noise_scale(self):
        op = CoordinateMask(np.arange(20000), 20000)
        obs = observe(op, np.zeros(20000), 0.5, RngHandle(3))
        assert obs.y.std() == pytest.approx(0.5, rel=0.03)

    def test_observation_validates(self, rng):
        op = identity(3)
        with pytest.raises(InvalidArgumentError):
            Observation(np.zeros(2), op, 0.1)
        with pytest.raises(InvalidArgumentError):
            Observation(np.zeros(3), op, -0.1)
        with pytest.raises(InvalidArgumentError):
            observe(op, np.zeros(3), -1.0, rng)


class TestDescriptors:
    @pytest.mark.parametrize("desc", [
        {"kind": "random_mask", "shape": [8, 8, 3], "keep_fraction": 0.3, "seed": 4},
        {"kind": "box_mask", "shape": [8, 8, 3], "box_fraction": 0.5},
        {"kind": "block_average", "shape": [8, 8, 3], "factor": 4},
        {"kind": "gaussian_blur", "shape": [4, 4, 1], "kernel_size": 3, "intensity": 1.0},
        {"kind": "random_dense", "m": 3, "n": 5, "seed": 2},
        {"kind": "identity", "n": 3},
        {"kind": "mask", "n": 5, "indices": [0, 2, 4]},
        {"kind": "dense", "matrix": [[1.0, 2.0], [0.0, 1.0]]},
    ])
    def test_rebuild_is_deterministic(self, desc):
        a = operator_from_descriptor(desc)
        b = operator_from_descriptor(desc)
        np.testing.assert_array_equal(a.to_dense(), b.to_dense())

    def test_descriptor_round_trip(self):
        for op in (make_random_mask(SHAPE, 0.3, RngHandle(9), seed=9), make_box_mask(SHAPE, 0.4),
                   make_block_average(SHAPE, 4), make_gaussian_blur(SHAPE, 3, 1.0),
                   make_random_dense(3, 5, RngHandle(2), seed=2)):
            again = operator_from_descriptor(op.descriptor())
            np.testing.assert_array_equal(again.to_dense(), op.to_dense())

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgumentError, match="valid kinds"):
            operator_from_descriptor({"kind": "fft"})

    def test_missing_key(self):
        with pytest.raises(InvalidArgumentError, match="missing key"):
            operator_from_descriptor({"kind": "block_average", "shape": [4, 4, 1]})

    def test_dense_aat_is_dense(self):
        assert isinstance(make_random_dense(3, 5, RngHandle(0)).aat_structure(), DenseSpd)
