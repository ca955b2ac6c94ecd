import math

import numpy as np
import pytest

from salt_climate.model_ops import (
    CoriolisField,
    NumericalBlowupError,
    PhysParams,
    StateVector,
    TruncationConfig,
    coupling_D,
    cutoff_g,
    dissipation_L,
    linear_C,
    pressure_recover,
    random_state,
    rhs_deterministic,
    state_norm,
    transport_B,
)
from salt_climate.spectral import (
    divergence,
    gradient,
    inner_product,
    laplacian,
    leray,
    to_physical,
    to_spectral,
)

from .conftest import band_limited


def div_max(u, grid):
    return np.abs(to_physical(divergence(to_spectral(u, grid), grid), grid)).max()


def solenoidal(grid, rng, amplitude=0.3):
    u = band_limited(grid, rng, (2,), kmax=4)
    P = to_physical(leray(to_spectral(u, grid), grid), grid)
    return amplitude * (P - P.mean(axis=(-2, -1), keepdims=True))


class TestStateVector:
    def test_ocean_defect_of_random_state(self, psi):
        div, mean = psi.ocean_defect()
        assert div < 1e-11 and mean < 1e-14

    def test_validate_rejects_compressible_ocean(self, grid):
        x, _ = grid.mesh
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, np.stack([z, z]), z, np.stack([np.sin(x), z]), z)
        with pytest.raises(ValueError):
            psi.validate()

    def test_field_views(self, psi):
        assert psi.u_a.shape == (2,) + psi.grid.shape
        assert np.array_equal(psi.theta_o, psi.data[5])


class TestCoriolis:
    def test_curl_of_potential(self, grid):
        c = CoriolisField.sinusoidal(grid, 1.3)
        Rh = to_spectral(c.R, grid)
        curl_R = to_physical(1j * grid.kx_odd * Rh[1] - 1j * grid.ky_odd * Rh[0], grid)
        assert np.abs(curl_R - c.f).max() < 1e-11
        assert np.abs(c.R.mean(axis=(-2, -1))).max() < 1e-14

    def test_constant_f_has_no_potential(self, grid):
        with pytest.raises(ValueError):
            CoriolisField(grid, np.ones(grid.shape))


class TestParams:
    def test_rejects_nonpositive_rossby(self, grid):
        with pytest.raises(ValueError):
            PhysParams(CoriolisField.zero(grid), Ro_a=0.0)

    def test_truncation_constraints(self):
        with pytest.raises(ValueError):
            TruncationConfig(R_cut=0.0)
        with pytest.raises(ValueError):
            TruncationConfig(R_cut=1.0, delta=-1.0)


class TestTransport:
    def test_zero(self, grid):
        assert np.abs(transport_B(StateVector.zeros(grid)).data).max() == 0

    def test_constant_advection(self, grid):
        x, _ = grid.mesh
        U = 0.7
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, np.stack([np.full(grid.shape, U), z]), np.sin(x),
                                      np.stack([z, z]), z)
        B = transport_B(psi)
        assert np.abs(B.theta_a - U * np.cos(x)).max() < 1e-13

    def test_ocean_energy_neutral(self, grid, rng):
        uo = solenoidal(grid, rng)
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, np.stack([z, z]), z, uo, z)
        B = transport_B(psi).u_o
        h1 = float(state_norm(np.concatenate([uo, np.zeros((4,) + grid.shape)]), grid, 1))
        l2 = math.sqrt(float(inner_product(uo, uo, grid)))
        assert abs(float(inner_product(B, uo, grid))) < 1e-10 * h1**2 * l2

    def test_quadratic_homogeneity(self, psi, rng):
        lam = rng.uniform(0.5, 2.0)
        a = transport_B(StateVector(psi.grid, lam * psi.data)).data
        assert np.abs(a - lam**2 * transport_B(psi).data).max() < 1e-12

    def test_ocean_tendency_divergence_free(self, psi):
        assert div_max(transport_B(psi).u_o, psi.grid) < 1e-11


class TestLinearC:
    def test_zero(self, grid, params):
        assert np.abs(linear_C(StateVector.zeros(grid), params).data).max() == 0

    def test_pure_buoyancy_gradient(self, grid):
        p = PhysParams(CoriolisField.zero(grid), Ro_a=2.0)
        x, _ = grid.mesh
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, np.stack([z, z]), np.sin(2 * np.pi * x / grid.L),
                                      np.stack([z, z]), z)
        C = linear_C(psi, p)
        k = 2 * np.pi / grid.L
        assert np.abs(C.u_a[0] - k * np.cos(k * x) / 2.0).max() < 1e-13
        assert np.abs(C.u_a[1]).max() < 1e-13

    def test_rotation_does_no_work(self, grid, rng, params):
        ua = band_limited(grid, rng, (2,), kmax=4)
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, ua, z, np.stack([z, z]), z)
        assert abs(float(inner_product(linear_C(psi, params).u_a, ua, grid))) < 1e-10

    def test_linear(self, psi, params, rng):
        lam = rng.uniform(-2, 2)
        a = linear_C(StateVector(psi.grid, lam * psi.data), params).data
        assert np.abs(a - lam * linear_C(psi, params).data).max() < 1e-12


class TestCoupling:
    def test_decoupled(self, psi, params):
        assert np.abs(coupling_D(psi, psi.u_a, params).data).max() == 0

    def test_matched_states(self, grid):
        p = PhysParams(CoriolisField.sinusoidal(grid), gamma=-0.2, sigma=-0.3)
        x, y = grid.mesh
        th = np.cos(x + y)
        z = np.zeros(grid.shape)
        q = to_spectral(np.sin(x) * np.cos(2 * y), grid)
        ua = to_physical(gradient(q, grid), grid)
        psi = StateVector.from_fields(grid, ua, th, np.stack([z, z]), th)
        assert np.abs(coupling_D(psi, ua, p).data).max() < 1e-14

    def test_ocean_forcing_admissible(self, psi, coupled_params, rng):
        eu = band_limited(psi.grid, rng, (2,)) + 0.5
        D = coupling_D(psi, eu, coupled_params)
        assert div_max(D.u_o, psi.grid) < 1e-11
        assert np.abs(D.u_o.mean(axis=(-2, -1))).max() < 1e-14

    def test_linear(self, psi, coupled_params, rng):
        lam = rng.uniform(-2, 2)
        a = coupling_D(StateVector(psi.grid, lam * psi.data), lam * psi.u_a, coupled_params).data
        assert np.abs(a - lam * coupling_D(psi, psi.u_a, coupled_params).data).max() < 1e-12

    def test_batched_expected_velocity_shape(self, psi, params):
        with pytest.raises(ValueError):
            coupling_D(psi, psi.u_a[0], params)


class TestDissipation:
    def test_inviscid(self, psi, params):
        assert np.abs(dissipation_L(psi, params).data).max() == 0

    def test_eigenfunction(self, grid):
        p = PhysParams(CoriolisField.zero(grid), Pe_a=50.0)
        x, _ = grid.mesh
        k = 3
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, np.stack([z, z]), np.sin(k * x), np.stack([z, z]), z)
        L = dissipation_L(psi, p)
        assert np.abs(L.theta_a + k**2 * np.sin(k * x) / 50.0).max() < 1e-13

    def test_matches_laplacian_composition(self, psi):
        g = psi.grid
        p = PhysParams(CoriolisField.zero(g), Re_a=10, Re_o=20, Pe_a=30, Pe_o=40)
        lap = to_physical(laplacian(psi.spectral(), g), g)
        nu = np.array([1 / 10, 1 / 10, 1 / 30, 1 / 20, 1 / 20, 1 / 40])[:, None, None]
        assert np.abs(dissipation_L(psi, p).data - nu * lap).max() < 1e-12


class TestPressure:
    def test_zero(self, grid):
        assert np.abs(pressure_recover(StateVector.zeros(grid))).max() == 0

    def test_gradient_source(self, grid):
        x, y = grid.mesh
        q = np.sin(x) * np.cos(2 * y)
        ua = to_physical(gradient(to_spectral(q, grid), grid), grid)
        z = np.zeros(grid.shape)
        psi = StateVector.from_fields(grid, ua, z, np.stack([z, z]), z)
        assert np.abs(pressure_recover(psi) - q).max() < 1e-12

    def test_residual(self, psi):
        g = psi.grid
        p = pressure_recover(psi)
        uo = psi.u_o
        uoh = to_spectral(uo, g)
        gx = to_physical(1j * g.kx_odd * uoh, g)
        gy = to_physical(1j * g.ky_odd * uoh, g)
        adv = uo[0:1] * gx + uo[1:2] * gy
        rhs = divergence(to_spectral(adv, g), g) + divergence(to_spectral(psi.u_a, g), g)
        lap = laplacian(to_spectral(p, g), g)
        mask = g.mask
        assert np.abs(to_physical((lap - rhs) * mask, g)).max() < 1e-10


class TestCutoff:
    cfg = TruncationConfig(R_cut=4.0, delta=2.0)

    def test_inside(self):
        assert cutoff_g(2.0, self.cfg) == 1.0

    def test_outside(self):
        assert cutoff_g(6.0, self.cfg) == 0.0

    def test_bridge_midpoint(self):
        assert cutoff_g(5.0, self.cfg) == pytest.approx(0.5)

    def test_monotone(self):
        x = np.linspace(0, 8, 401)
        assert np.all(np.diff(cutoff_g(x, self.cfg)) <= 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            cutoff_g(-1.0, self.cfg)


class TestRhs:
    def test_zero(self, grid, coupled_params):
        out = rhs_deterministic(StateVector.zeros(grid), coupled_params, TruncationConfig())
        assert np.abs(out.data).max() == 0

    def test_matches_operator_sum(self, psi, grid):
        p = PhysParams(CoriolisField.sinusoidal(grid), Re_a=40, Pe_o=30, gamma=-0.1, sigma=-0.2)
        out = rhs_deterministic(psi, p, TruncationConfig()).data
        ref = (dissipation_L(psi, p).data - transport_B(psi).data - linear_C(psi, p).data
               - coupling_D(psi, psi.u_a, p).data)
        assert np.abs(out - ref).max() < 1e-14

    def test_transport_suppressed_beyond_cutoff(self, psi, coupled_params):
        R = float(state_norm(psi.data, psi.grid, 2)) / 3
        out = rhs_deterministic(psi, coupled_params, TruncationConfig(R, 1e-3)).data
        ref = (dissipation_L(psi, coupled_params).data - linear_C(psi, coupled_params).data
               - coupling_D(psi, psi.u_a, coupled_params).data)
        assert np.abs(out - ref).max() < 1e-14

    def test_ocean_tendency_divergence_free(self, psi, coupled_params):
        out = rhs_deterministic(psi, coupled_params, TruncationConfig())
        assert div_max(out.u_o, psi.grid) < 1e-11

    def test_nan_raises(self, psi, params):
        bad = psi.copy()
        bad.data[0, 0, 0] = np.nan
        with pytest.raises(NumericalBlowupError):
            rhs_deterministic(bad, params, TruncationConfig())


def test_random_state_band_limit(grid, rng):
    psi = random_state(grid, rng, kmax=2, amplitude=1.0)
    h = psi.spectral()
    outside = (grid.mode_x**2 + grid.mode_y**2) > 4
    assert np.abs(h[..., outside]).max() < 1e-14
