"""Affine transform encoder: identity initialization, grid geometry,
sampler semantics, and end-to-end differentiability."""

import numpy as np
import pytest

from sketchseg import ops
from sketchseg.errors import DimensionError
from sketchseg.stn import AffineTransformEncoder, affine_grid, grid_sample, normalized_lattice
from sketchseg.tensor import Tape, Tensor


def identity_theta(n=1, dtype=np.float64) -> Tensor:
    return Tensor(np.tile([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], (n, 1)).astype(dtype))


class TestAffineGrid:
    def test_identity_gives_pixel_center_lattice(self):
        grid = affine_grid(identity_theta(), 4, 6).data
        np.testing.assert_array_equal(grid[0, 0, :, 0], normalized_lattice(6, np.float64))
        np.testing.assert_array_equal(grid[0, :, 0, 1], normalized_lattice(4, np.float64))

    def test_translation_column_shifts_lattice(self):
        theta = Tensor(np.array([[1.0, 0.0, 0.5, 0.0, 1.0, 0.0]]))
        grid = affine_grid(theta, 3, 3).data
        base = affine_grid(identity_theta(), 3, 3).data
        np.testing.assert_allclose(grid[..., 0], base[..., 0] + 0.5)
        np.testing.assert_allclose(grid[..., 1], base[..., 1])

    def test_half_scale_bounds(self):
        theta = Tensor(np.array([[0.5, 0.0, 0.0, 0.0, 0.5, 0.0]]))
        grid = affine_grid(theta, 8, 8).data
        assert grid.min() >= -0.5 and grid.max() <= 0.5

    def test_rejects_empty_grid(self):
        with pytest.raises(DimensionError):
            affine_grid(identity_theta(), 0, 4)


class TestGridSample:
    def test_identity_grid_reproduces_input_exactly(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 3, 7, 9)))
        grid = affine_grid(identity_theta(2), 7, 9)
        out = grid_sample(x, grid)
        assert (out.data == x.data).all()

    def test_far_out_of_range_samples_zero(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)))
        grid = Tensor(np.full((1, 4, 4, 2), 3.0))
        out = grid_sample(x, grid)
        assert (out.data == 0).all()

    def test_matches_scalar_bilinear_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 6, 7))
        grid = rng.uniform(-0.95, 0.95, size=(1, 4, 5, 2))
        out = grid_sample(Tensor(x), Tensor(grid)).data

        def oracle(n, c, gy, gx):
            px = ((gx + 1) * 7 - 1) / 2
            py = ((gy + 1) * 6 - 1) / 2
            x0, y0 = int(np.floor(px)), int(np.floor(py))
            tx, ty = px - x0, py - y0
            total = 0.0
            for dy, wy in ((0, 1 - ty), (1, ty)):
                for dx, wx in ((0, 1 - tx), (1, tx)):
                    xi, yi = x0 + dx, y0 + dy
                    if 0 <= xi < 7 and 0 <= yi < 6:
                        total += wy * wx * x[n, c, yi, xi]
            return total

        for i in range(4):
            for j in range(5):
                for c in range(2):
                    expect = oracle(0, c, grid[0, i, j, 1], grid[0, i, j, 0])
                    assert out[0, c, i, j] == pytest.approx(expect, abs=1e-6)

    def test_batch_mismatch(self):
        with pytest.raises(DimensionError):
            grid_sample(Tensor(np.zeros((2, 1, 4, 4))), Tensor(np.zeros((1, 4, 4, 2))))


class TestEncoder:
    def test_fresh_encoder_is_exact_identity(self):
        rng = np.random.default_rng(3)
        ate = AffineTransformEncoder(5, rng=rng)
        for _ in range(20):
            x = Tensor(rng.normal(size=(2, 5, 10, 12)).astype(np.float32))
            out = ate(x)
            assert np.abs(out.data - x.data).max() == 0.0

    def test_initial_theta_is_identity(self):
        rng = np.random.default_rng(4)
        ate = AffineTransformEncoder(3, rng=rng)
        theta = ate.localize(Tensor(rng.normal(size=(4, 3, 6, 6)).astype(np.float32)))
        np.testing.assert_array_equal(
            theta.data, np.tile([1, 0, 0, 0, 1, 0], (4, 1)).astype(np.float32)
        )

    def test_zero_conv_gives_regressor_bias(self):
        rng = np.random.default_rng(5)
        ate = AffineTransformEncoder(3, rng=rng, dtype=np.float64)
        ate.loc_conv.weight.data[:] = 0.0
        ate.regressor.bias.data[:] = [0.5, 0.1, -0.2, 0.0, 2.0, 0.3]
        theta = ate.localize(Tensor(rng.normal(size=(2, 3, 5, 5))))
        np.testing.assert_allclose(theta.data, np.tile([0.5, 0.1, -0.2, 0.0, 2.0, 0.3], (2, 1)))

    def test_too_small_feature_map(self):
        ate = AffineTransformEncoder(2)
        with pytest.raises(DimensionError):
            ate.localize(Tensor(np.zeros((1, 2, 2, 2), dtype=np.float32)))

    def test_one_pixel_translation_equals_shift(self):
        rng = np.random.default_rng(6)
        h = w = 12
        x = Tensor(rng.normal(size=(1, 3, h, w)))
        theta = Tensor(np.array([[1.0, 0.0, 2.0 / w, 0.0, 1.0, 0.0]]))
        out = grid_sample(x, affine_grid(theta, h, w)).data
        expect = np.zeros_like(x.data)
        expect[:, :, :, :-1] = x.data[:, :, :, 1:]
        np.testing.assert_allclose(out, expect, atol=1e-6)

    def test_trained_params_warp_and_backprop(self):
        rng = np.random.default_rng(7)
        ate = AffineTransformEncoder(2, rng=rng, dtype=np.float64)
        ate.regressor.weight.data[:] = rng.normal(scale=0.2, size=ate.regressor.weight.shape)
        x = Tensor(rng.normal(size=(1, 2, 9, 9)))
        with Tape() as tape:
            out = ate(x)
            loss = ops.sum_all(out)
        assert np.abs(out.data - x.data).max() > 1e-6
        tape.backward(loss)
        grads = [p.grad for _, p in ate.named_parameters()]
        assert all(g is not None for g in grads)
        assert sum(float(np.abs(g).sum()) for g in grads) > 0.0
