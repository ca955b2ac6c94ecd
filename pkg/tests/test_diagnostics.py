import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.special import j1

from salt_climate.diagnostics import (
    CSV_COLUMNS,
    DiagnosticsRecord,
    MaterialLoop,
    advect_loop,
    casimir,
    circulation,
    energy_sam,
    ensemble_variance,
    fourier_resample,
    loop_spacing,
    potential_vorticity,
    resample_if_stretched,
    state_energy,
    variance_rhs,
)
from salt_climate.dynamics import CompressibleState, Ensemble, PositivityError, SamParams, StepperConfig, step_lasalt
from salt_climate.model_ops import CoriolisField, PhysParams, StateVector
from salt_climate.noise import BrownianDriver, NoiseBasis
from salt_climate.spectral import gradient, to_physical, to_spectral

from .conftest import band_limited


def disk_integral_cos(r, c):
    """Integral of ``cos(x)`` over a disk of radius ``r`` whose centre has abscissa ``c``."""
    return 2 * np.pi * r * j1(r) * math.cos(c)


class TestLoopGeometry:
    def test_circle_spacing(self, grid):
        loop = MaterialLoop.circle(grid, radius=1.0, K=64)
        assert float(loop.spacing()) == pytest.approx(2 * math.sin(math.pi / 64))

    def test_resample_keeps_points_on_circle(self, grid):
        loop = MaterialLoop.circle(grid, (1.0, 2.0), 0.5, 16)
        fine = fourier_resample(loop.points, 64)
        r = np.hypot(fine[:, 0] - 1.0, fine[:, 1] - 2.0)
        assert np.abs(r - 0.5).max() < 1e-14
        assert np.abs(fine[::4] - loop.points).max() < 1e-14

    def test_resample_refuses_coarsening(self, grid):
        with pytest.raises(ValueError):
            fourier_resample(MaterialLoop.circle(grid, K=16).points, 8)

    def test_stretched_loop_refined(self, grid):
        pts = MaterialLoop.circle(grid, radius=2.0, K=8).points
        out = resample_if_stretched(pts, 0.3)
        assert float(loop_spacing(out)) <= 0.3
        assert out.shape[0] % 8 == 0

    def test_rejects_bad_shape(self, grid):
        with pytest.raises(ValueError):
            MaterialLoop(np.zeros((4, 3)), grid)


def cellular(grid):
    x, y = grid.mesh
    return np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])


class TestAdvectLoop:
    def test_zero_velocity(self, grid):
        loop = MaterialLoop.circle(grid, K=32)
        out = advect_loop(loop, np.zeros((2,) + grid.shape), dt=0.1)
        assert np.abs(out.points - loop.points).max() < 1e-15 * np.pi

    def test_uniform_translation(self, grid):
        loop = MaterialLoop.circle(grid, K=32)
        u = np.stack([np.full(grid.shape, 0.3), np.full(grid.shape, -0.7)])
        out = advect_loop(loop, u, dt=0.25)
        assert np.abs(out.points - loop.points - [0.075, -0.175]).max() < 1e-13

    def test_constant_noise_translates(self, grid):
        loop = MaterialLoop.circle(grid, K=16)
        basis = NoiseBasis(grid, np.stack([np.full(grid.shape, 1.0), np.full(grid.shape, 2.0)])[None])
        out = advect_loop(loop, np.zeros((2,) + grid.shape), basis, np.array([0.05]), dt=0.01, mode="heun")
        assert np.abs(out.points - loop.points - [0.05, 0.1]).max() < 1e-13

    def test_noise_needs_increments(self, grid):
        basis = NoiseBasis(grid, np.ones((1, 2) + grid.shape))
        with pytest.raises(ValueError):
            advect_loop(MaterialLoop.circle(grid, K=8), np.zeros((2,) + grid.shape), basis, dt=0.1)

    def test_cellular_flow_against_ode_solver(self, grid):
        loop = MaterialLoop.circle(grid, (1.0, 1.3), 0.5, 32)
        u = cellular(grid)
        dt, steps = 0.01, 20
        for _ in range(steps):
            loop = advect_loop(loop, u, dt=dt)

        def rhs(_, z):
            x, y = z.reshape(2, -1)
            return np.concatenate([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])

        start = MaterialLoop.circle(grid, (1.0, 1.3), 0.5, 32).points
        sol = solve_ivp(rhs, (0, dt * steps), start.T.ravel(), method="DOP853", rtol=1e-12, atol=1e-13)
        ref = sol.y[:, -1].reshape(2, -1).T
        assert np.abs(loop.points - ref).max() < 1e-6


class TestCirculation:
    def test_gradient_field(self, grid, rng):
        u = to_physical(gradient(to_spectral(band_limited(grid, rng, kmax=4), grid), grid), grid)
        loop = MaterialLoop.circle(grid, (2.0, 3.0), 1.2, 128)
        assert abs(float(circulation(loop, u))) < 1e-12

    def test_zero_field(self, grid):
        assert float(circulation(MaterialLoop.circle(grid, K=16), np.zeros((2,) + grid.shape))) == 0.0

    def test_stokes_area_integral(self, grid):
        x, y = grid.mesh
        u = np.stack([-np.sin(y), np.sin(x)])  # curl = cos x + cos y
        c, r = (2.5, 3.5), 1.1
        expected = disk_integral_cos(r, c[0]) + disk_integral_cos(r, c[1])
        loop = MaterialLoop.circle(grid, c, r, 128)
        assert float(circulation(loop, u)) == pytest.approx(expected, rel=1e-12)

    def test_planetary_part(self, grid):
        cor = CoriolisField.sinusoidal(grid, 1.0)  # f = sin y
        c, r, Ro = (2.0, 1.0), 0.9, 0.5
        expected = disk_integral_cos(r, c[1] - math.pi / 2) / Ro
        loop = MaterialLoop.circle(grid, c, r, 128)
        assert float(circulation(loop, np.zeros((2,) + grid.shape), cor, Ro)) == pytest.approx(expected, rel=1e-12)

    def test_trapezoid_second_order(self, grid):
        x, y = grid.mesh
        u = np.stack([-np.sin(y), np.sin(x)])
        c, r = (2.5, 3.5), 1.1
        expected = disk_integral_cos(r, c[0]) + disk_integral_cos(r, c[1])
        errs = [abs(float(circulation(MaterialLoop.circle(grid, c, r, K), u, method="trapezoid")) - expected)
                for K in (64, 128)]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_batched_loops(self, grid, rng):
        u = band_limited(grid, rng, (2, 2), kmax=3)
        pts = np.stack([MaterialLoop.circle(grid, (1, 1), 0.5, 32).points,
                        MaterialLoop.circle(grid, (4, 2), 0.8, 32).points])
        out = circulation(pts, u, grid=grid)
        for m in range(2):
            assert out[m] == pytest.approx(float(circulation(pts[m], u[m], grid=grid)), abs=1e-14)

    def test_too_few_points(self, grid):
        with pytest.raises(ValueError):
            circulation(np.zeros((2, 2)), np.zeros((2,) + grid.shape), grid=grid)

    def test_unknown_method(self, grid):
        with pytest.raises(ValueError):
            circulation(MaterialLoop.circle(grid, K=8), np.zeros((2,) + grid.shape), method="simpson")


@pytest.fixture
def sam_params(grid):
    return SamParams(kappa=0.8, alpha=1.5, Ro=0.5, coriolis=CoriolisField.sinusoidal(grid))


class TestCompressibleDiagnostics:
    def test_pv_at_rest_without_rotation(self, grid):
        p = SamParams(1.0, 1.4, 1.0, CoriolisField.zero(grid))
        st = CompressibleState(np.zeros((2,) + grid.shape), 1.2, 0.9, p)
        assert np.abs(potential_vorticity(st)).max() == 0

    def test_pv_of_shear(self, grid):
        p = SamParams(1.0, 1.4, 1.0, CoriolisField.zero(grid))
        _, y = grid.mesh
        st = CompressibleState(np.stack([np.sin(y), np.zeros(grid.shape)]), 1.0, 1.0, p)
        assert np.abs(potential_vorticity(st) + np.cos(y)).max() < 1e-13

    def test_pv_reconstructs_vorticity(self, grid, rng, sam_params):
        u = band_limited(grid, rng, (2,), kmax=3)
        D = 1 + 0.2 * band_limited(grid, rng, kmax=2)
        st = CompressibleState(u, D, 1.5, sam_params)
        uh = to_spectral(u, grid)
        om = to_physical(1j * grid.kx_odd * uh[1] - 1j * grid.ky_odd * uh[0], grid)
        resid = potential_vorticity(st) * D * 1.5 - om - sam_params.coriolis.f / sam_params.Ro
        assert np.abs(resid).max() < 1e-12

    def test_pv_requires_positive_mass(self, grid, sam_params):
        x, _ = grid.mesh
        st = CompressibleState(np.zeros((2,) + grid.shape), np.sin(x), 1.0, sam_params)
        with pytest.raises(PositivityError):
            potential_vorticity(st)

    def test_casimir_of_one_is_heat_content(self, grid, rng, sam_params):
        D = 1 + 0.2 * band_limited(grid, rng, kmax=2)
        theta = 1 + 0.1 * band_limited(grid, rng, kmax=2)
        st = CompressibleState(band_limited(grid, rng, (2,), kmax=2), D, theta, sam_params)
        assert casimir(st, np.ones_like) == pytest.approx(float((D * theta).sum() * grid.dx**2), rel=1e-14)

    def test_casimir_of_identity_vanishes(self, grid, rng, sam_params):
        st = CompressibleState(band_limited(grid, rng, (2,), kmax=3), 1.1, 0.9, sam_params)
        assert abs(casimir(st, lambda q: q)) < 1e-12

    def test_energy_of_uniform_state(self, grid, sam_params):
        st = CompressibleState(np.zeros((2,) + grid.shape), 1.2, 0.7, sam_params)
        assert energy_sam(st) == pytest.approx(0.8 * (1.2 * 0.7) ** 1.5 * grid.L**2, rel=1e-13)

    def test_kinetic_energy_scales_quadratically(self, grid, rng, sam_params):
        u = band_limited(grid, rng, (2,), kmax=3)
        D = 1 + 0.2 * band_limited(grid, rng, kmax=2)
        rest = energy_sam(CompressibleState(np.zeros_like(u), D, 1.0, sam_params))
        one = energy_sam(CompressibleState(u, D, 1.0, sam_params)) - rest
        three = energy_sam(CompressibleState(3 * u, D, 1.0, sam_params)) - rest
        assert three == pytest.approx(9 * one, rel=1e-12)


class TestEnsembleVariance:
    def test_identical_members(self, grid, rng):
        e = band_limited(grid, rng, (3,))
        assert ensemble_variance(np.stack([e, e, e]), e, grid) == 0.0

    def test_symmetric_pair(self, grid, rng):
        e, v = band_limited(grid, rng, (3,)), band_limited(grid, rng, (3,))
        norm2 = float((v**2).sum() * grid.dx**2)
        assert ensemble_variance(np.stack([e + v, e - v]), e, grid) == pytest.approx(norm2, rel=1e-14)

    def test_matches_loop_oracle(self, grid, rng):
        mem = rng.standard_normal((3, 6) + grid.shape)
        e = rng.standard_normal((6,) + grid.shape)
        total = 0.0
        for m in range(3):
            for c in range(3):
                total += sum(float(v) ** 2 for v in (mem[m, c] - e[c]).ravel())
        expected = total * grid.dx**2 / 3
        assert ensemble_variance(mem, e, grid) == pytest.approx(expected, rel=1e-12)

    def test_accepts_ensemble_and_state(self, psi):
        ens = Ensemble.replicate(psi, 2, BrownianDriver(0, 0.1))
        assert ensemble_variance(ens, psi) == 0.0


class TestVarianceRhs:
    def test_zero_fluctuation_without_noise(self, psi, params):
        mem = np.stack([psi.data, psi.data])
        assert variance_rhs(mem, psi, params, NoiseBasis.empty(psi.grid)) == 0.0

    def test_matches_deterministic_rate(self, psi, rng):
        # without noise the members evolve deterministically, so the rate is a plain derivative
        p = PhysParams(CoriolisField.sinusoidal(psi.grid), Re_a=50, Pe_a=50, gamma=-0.2, sigma=-0.1)
        data = np.stack([psi.data] * 3)
        data[:, 0:3] += 0.05 * band_limited(psi.grid, rng, (3, 3), kmax=3)
        ens = Ensemble(StateVector(psi.grid, data), BrownianDriver(0, 1e-4))
        basis = NoiseBasis.empty(psi.grid)
        h = 1e-4
        cfg = StepperConfig(h, "rk3")
        E1, e1 = step_lasalt(psi, ens, p, basis, cfg)
        # one-sided fourth-order difference from the initial time
        E2, e2 = step_lasalt(E1, e1, p, basis, cfg)
        E3, e3 = step_lasalt(E2, e2, p, basis, cfg)
        E4, e4 = step_lasalt(E3, e3, p, basis, cfg)
        th = [ensemble_variance(x, y) for x, y in ((ens, psi), (e1, E1), (e2, E2), (e3, E3), (e4, E4))]
        deriv = (-25 * th[0] + 48 * th[1] - 36 * th[2] + 16 * th[3] - 3 * th[4]) / (12 * h)
        assert variance_rhs(ens, psi, p, basis) == pytest.approx(deriv, rel=1e-6)


class TestRecords:
    def test_defaults_are_nan(self):
        rec = DiagnosticsRecord(t=0.5)
        row = rec.row()
        assert row[0] == 0.5 and all(math.isnan(v) for v in row[1:-1])
        assert row[-1] == 0
        assert not rec.is_finite()

    def test_column_order(self):
        rec = DiagnosticsRecord(**{c: float(i) for i, c in enumerate(CSV_COLUMNS)})
        assert rec.row() == list(range(len(CSV_COLUMNS)))
        assert rec.is_finite()

    def test_state_energy(self, grid):
        data = np.zeros((6,) + grid.shape)
        data[2] = 2.0
        assert state_energy(data, grid) == pytest.approx(2.0 * grid.L**2)
