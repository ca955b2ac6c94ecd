import math

import numpy as np
import pytest

from salt_climate.spectral import (
    CompatibilityError,
    DimensionError,
    Grid,
    curl,
    dealias,
    divergence,
    evaluate_at_points,
    evaluate_batched,
    gradient,
    inner_product,
    invert_laplacian,
    laplacian,
    leray,
    leray_helmholtz,
    remove_space_mean,
    sobolev_norm,
    spectral_derivative,
    squared_norm,
    to_physical,
    to_spectral,
)

from .conftest import band_limited


def fd8_x(f, dx):
    """Eighth-order central difference along the last axis."""
    c = [4 / 5, -1 / 5, 4 / 105, -1 / 280]
    out = np.zeros_like(f)
    for j, cj in enumerate(c, start=1):
        out += cj * (np.roll(f, -j, axis=-1) - np.roll(f, j, axis=-1))
    return out / dx


class TestGrid:
    def test_cutoff_two_thirds(self):
        assert Grid(2 * math.pi, 64).cutoff == 21

    def test_rejects_odd_size(self):
        with pytest.raises(ValueError):
            Grid(2 * math.pi, 33)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            Grid(-1.0, 32)

    def test_mesh_orientation(self, grid):
        x, y = grid.mesh
        assert np.all(x[0] == grid.coords)
        assert np.all(y[:, 0] == grid.coords)


class TestTransforms:
    def test_constant_is_zero_mode(self, grid):
        fh = to_spectral(np.full(grid.shape, 3.5), grid)
        assert fh[0, 0] == pytest.approx(3.5)
        fh[0, 0] = 0
        assert np.abs(fh).max() < 1e-14

    def test_single_sine_mode(self, grid):
        x, _ = grid.mesh
        fh = to_spectral(np.sin(2 * np.pi * x / grid.L), grid)
        big = np.argwhere(np.abs(fh) > 1e-12)
        assert big.tolist() == [[0, 1]]
        assert fh[0, 1] == pytest.approx(-0.5j)

    def test_round_trip(self, grid, rng):
        f = rng.standard_normal((3,) + grid.shape)
        back = to_physical(to_spectral(f, grid), grid)
        assert np.abs(back - f).max() < 1e-12 * np.abs(f).max()

    def test_shape_mismatch(self, grid):
        with pytest.raises(DimensionError):
            to_spectral(np.zeros((8, 8)), grid)
        with pytest.raises(DimensionError):
            to_physical(np.zeros((4, 4), complex), grid)


class TestDerivatives:
    def test_sine_derivative(self, grid):
        x, _ = grid.mesh
        d = to_physical(spectral_derivative(to_spectral(np.sin(x), grid), (1, 0), grid), grid)
        assert np.abs(d - np.cos(x)).max() < 1e-12

    @pytest.mark.parametrize("alpha", [(1, 0), (0, 1), (2, 1), (0, 3)])
    def test_constant_has_zero_derivative(self, grid, alpha):
        fh = to_spectral(np.full(grid.shape, 2.0), grid)
        assert np.abs(spectral_derivative(fh, alpha, grid)).max() == 0

    def test_matches_eighth_order_differences(self, rng):
        g = Grid(2 * math.pi, 256)
        f = band_limited(g, rng, kmax=6)
        d = to_physical(spectral_derivative(to_spectral(f, g), (1, 0), g), g)
        assert np.abs(d - fd8_x(f, g.dx)).max() < 1e-8

    def test_commutes_with_dealias(self, grid, rng):
        fh = to_spectral(rng.standard_normal(grid.shape), grid)
        a = spectral_derivative(dealias(fh, grid), (1, 1), grid)
        b = dealias(spectral_derivative(fh, (1, 1), grid), grid)
        assert np.array_equal(a, b)

    def test_curl_of_gradient_vanishes(self, grid, rng):
        fh = to_spectral(band_limited(grid, rng), grid)
        assert np.abs(curl(gradient(fh, grid), grid)).max() < 1e-12

    def test_laplacian_eigenfunction(self, grid):
        x, y = grid.mesh
        f = np.sin(2 * x) * np.cos(y)
        lap = to_physical(laplacian(to_spectral(f, grid), grid), grid)
        assert np.abs(lap + 5 * f).max() < 1e-12


class TestLeray:
    def test_pure_gradient(self, grid):
        x, _ = grid.mesh
        s = np.sin(2 * np.pi * x / grid.L)
        u = to_physical(gradient(to_spectral(s, grid), grid), grid)
        sol, q = leray_helmholtz(to_spectral(u, grid), grid)
        assert np.abs(sol).max() < 1e-13
        assert np.abs(to_physical(q, grid) - s).max() < 1e-12

    def test_pure_solenoidal(self, grid):
        _, y = grid.mesh
        u = np.stack([np.sin(2 * np.pi * y / grid.L), np.zeros(grid.shape)])
        sol, q = leray_helmholtz(to_spectral(u, grid), grid)
        assert np.abs(to_physical(sol, grid) - u).max() < 1e-13
        assert np.abs(q).max() < 1e-13

    def test_random_reconstruction_and_orthogonality(self, grid, rng):
        u = band_limited(grid, rng, (2,))
        uh = to_spectral(u, grid)
        sol, q = leray_helmholtz(uh, grid)
        grad = gradient(q, grid)
        assert np.abs(to_physical(sol + grad, grid) - u).max() < 1e-12
        ip = inner_product(to_physical(sol, grid), to_physical(grad, grid), grid)
        assert abs(ip) < 1e-12 * inner_product(u, u, grid)

    def test_idempotent_and_divergence_free(self, grid, rng):
        P = leray(to_spectral(band_limited(grid, rng, (2,)), grid), grid)
        assert np.abs(leray(P, grid) - P).max() < 1e-14
        assert np.abs(to_physical(divergence(P, grid), grid)).max() < 1e-12

    def test_orthogonal_to_arbitrary_gradient(self, grid, rng):
        P = to_physical(leray(to_spectral(band_limited(grid, rng, (2,)), grid), grid), grid)
        gq = to_physical(gradient(to_spectral(band_limited(grid, rng), grid), grid), grid)
        assert abs(inner_product(P, gq, grid)) < 1e-12

    def test_mean_is_solenoidal(self, grid):
        u = np.stack([np.full(grid.shape, 1.5), np.full(grid.shape, -0.5)])
        sol, q = leray_helmholtz(to_spectral(u, grid), grid)
        assert np.abs(to_physical(sol, grid) - u).max() < 1e-14

    def test_requires_two_components(self, grid):
        with pytest.raises(DimensionError):
            leray_helmholtz(np.zeros((3,) + grid.spectral_shape, complex), grid)


class TestMeanRemoval:
    def test_constant_to_zero(self, grid):
        fh = to_spectral(np.full((2,) + grid.shape, 4.0), grid)
        assert np.abs(remove_space_mean(fh)).max() == 0

    def test_zero_mean_unchanged(self, grid, rng):
        fh = to_spectral(rng.standard_normal(grid.shape), grid)
        fh[0, 0] = 0
        assert np.array_equal(remove_space_mean(fh), fh)

    def test_constant_plus_sine(self, grid):
        x, _ = grid.mesh
        out = to_physical(remove_space_mean(to_spectral(2 + np.sin(x), grid)), grid)
        assert np.abs(out - np.sin(x)).max() < 1e-14


class TestSobolevNorm:
    def test_zero(self, grid):
        assert sobolev_norm(np.zeros((6,) + grid.spectral_shape, complex), 2, grid) == 0

    def test_constant_temperature(self, grid):
        data = np.zeros((6,) + grid.shape)
        data[2] = -3.0
        norm = sobolev_norm(to_spectral(data, grid), 3, grid)
        assert norm == pytest.approx(3.0 * grid.L, rel=1e-14)

    @pytest.mark.parametrize("s", [0, 1, 2])
    def test_single_mode_matches_quadrature(self, grid, s):
        x, y = grid.mesh
        f = np.cos(2 * x + 3 * y)
        fh = to_spectral(f, grid)
        total = 0.0
        for ax in range(s + 1):
            for ay in range(s + 1 - ax):
                d = to_physical(spectral_derivative(fh, (ax, ay), grid), grid)
                total += inner_product(d, d, grid, axes=2)
        assert float(squared_norm(fh, grid, s)) == pytest.approx(total, rel=1e-10)

    def test_parseval(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        quad = float(inner_product(f, f, grid, axes=2))
        assert float(squared_norm(to_spectral(f, grid), grid)) == pytest.approx(quad, rel=1e-10)


class TestInvertLaplacian:
    def test_eigenfunction(self, grid):
        x, _ = grid.mesh
        k = 3
        g = to_physical(invert_laplacian(to_spectral(-k**2 * np.sin(k * x), grid), grid), grid)
        assert np.abs(g - np.sin(k * x)).max() < 1e-13

    def test_zero(self, grid):
        z = np.zeros(grid.spectral_shape, complex)
        assert np.abs(invert_laplacian(z, grid)).max() == 0

    def test_random_zero_mean(self, grid, rng):
        fh = dealias(remove_space_mean(to_spectral(rng.standard_normal(grid.shape), grid)), grid)
        back = laplacian(invert_laplacian(fh, grid), grid)
        assert np.abs(to_physical(back - fh, grid)).max() < 1e-11

    def test_nonzero_mean_rejected(self, grid):
        with pytest.raises(CompatibilityError):
            invert_laplacian(to_spectral(np.ones(grid.shape), grid), grid)


class TestDealias:
    def test_passband_identity(self, grid, rng):
        f = band_limited(grid, rng)
        fh = to_spectral(f, grid)
        assert np.array_equal(dealias(fh, grid), fh * grid.mask)
        assert np.abs(to_physical(dealias(fh, grid), grid) - f).max() < 1e-14

    def test_annihilates_high_modes(self, grid, rng):
        fh = to_spectral(rng.standard_normal(grid.shape), grid) * ~grid.mask
        assert np.abs(dealias(fh, grid)).max() == 0

    def test_idempotent(self, grid, rng):
        fh = to_spectral(rng.standard_normal(grid.shape), grid)
        once = dealias(fh, grid)
        assert np.array_equal(dealias(once, grid), once)


class TestPointEvaluation:
    def test_exact_for_band_limited(self, grid, rng):
        pts = rng.uniform(-1, 8, size=(17, 2))
        f = lambda x, y: np.sin(2 * x - y) + 0.3 * np.cos(5 * y)
        x, y = grid.mesh
        vals = evaluate_at_points(to_spectral(f(x, y), grid), pts, grid)
        assert np.abs(vals - f(pts[:, 0], pts[:, 1])).max() < 1e-12

    def test_batched_matches_loop(self, grid, rng):
        fh = to_spectral(band_limited(grid, rng, (3, 2)), grid)
        pts = rng.uniform(0, grid.L, size=(3, 5, 2))
        out = evaluate_batched(fh, pts, grid)
        for m in range(3):
            assert np.allclose(out[m], evaluate_at_points(fh[m], pts[m], grid), atol=1e-13)

    def test_point_shape_checked(self, grid):
        with pytest.raises(DimensionError):
            evaluate_at_points(np.zeros(grid.spectral_shape, complex), np.zeros((3, 3)), grid)
