"""Operator algebra of the coupled atmosphere-ocean model.

The state ``psi = (u_a, theta_a, u_o, theta_o)`` is stored as one physical
array of shape ``(..., 6, n, n)`` with components ordered
``u_a_x, u_a_y, theta_a, u_o_x, u_o_y, theta_o``.  Leading axes index
ensemble members, so every operator acts on a whole ensemble at once.

The truncated right-hand side is

    d_t psi = L psi - g_R(||psi||_s) B(psi, psi) - C psi - D(psi_a, psi_o)

with transport ``B``, rotation/buoyancy ``C``, air-sea coupling ``D`` and
dissipation ``L``.  Ocean velocity tendencies are projected onto
divergence-free, zero-mean fields, which absorbs the ocean pressure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .spectral import (
    DimensionError,
    Grid,
    dealias,
    invert_laplacian,
    leray,
    leray_helmholtz,
    remove_space_mean,
    sobolev_norm,
    to_physical,
    to_spectral,
)

ATMOS = slice(0, 3)
OCEAN = slice(3, 6)
U_A = slice(0, 2)
THETA_A = 2
U_O = slice(3, 5)
THETA_O = 5
COMPONENTS = ("u_a_x", "u_a_y", "theta_a", "u_o_x", "u_o_y", "theta_o")


class NumericalBlowupError(FloatingPointError):
    """Non-finite values appeared in the state or a tendency.

    Attributes
    ----------
    last_valid_time : float or None
        Time of the last finite state, when known.
    """

    def __init__(self, message: str, last_valid_time: float | None = None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


@dataclass
class StateVector:
    """Coupled state ``(u_a, theta_a, u_o, theta_o)`` in physical space.

    ``data`` has shape ``(..., 6, n, n)``; a leading batch shape turns the
    object into a stack of independent states.
    """

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim < 3 or self.data.shape[-3:] != (6, *self.grid.shape):
            raise DimensionError(
                f"state data must end in (6, {self.grid.n}, {self.grid.n}), got {self.data.shape}"
            )

    @classmethod
    def zeros(cls, grid: Grid, batch: tuple[int, ...] = ()) -> "StateVector":
        return cls(grid, np.zeros(batch + (6, *grid.shape)))

    @classmethod
    def from_fields(cls, grid, u_a, theta_a, u_o, theta_o) -> "StateVector":
        """Assemble from physical component arrays."""
        u_a = np.asarray(u_a, float)
        u_o = np.asarray(u_o, float)
        parts = [u_a, np.asarray(theta_a, float)[..., None, :, :], u_o,
                 np.asarray(theta_o, float)[..., None, :, :]]
        return cls(grid, np.concatenate(parts, axis=-3))

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.data.shape[:-3]

    @property
    def u_a(self) -> np.ndarray:
        return self.data[..., U_A, :, :]

    @property
    def theta_a(self) -> np.ndarray:
        return self.data[..., THETA_A, :, :]

    @property
    def u_o(self) -> np.ndarray:
        return self.data[..., U_O, :, :]

    @property
    def theta_o(self) -> np.ndarray:
        return self.data[..., THETA_O, :, :]

    @property
    def atmos(self) -> np.ndarray:
        return self.data[..., ATMOS, :, :]

    @property
    def ocean(self) -> np.ndarray:
        return self.data[..., OCEAN, :, :]

    def spectral(self) -> np.ndarray:
        return to_spectral(self.data, self.grid)

    def copy(self) -> "StateVector":
        return StateVector(self.grid, self.data.copy())

    def __getitem__(self, idx) -> "StateVector":
        """Select batch entries."""
        return StateVector(self.grid, self.data[idx])

    def ocean_defect(self) -> tuple[float, float]:
        """Largest ocean divergence and mean velocity magnitude."""
        uh = to_spectral(self.u_o, self.grid)
        div = 1j * self.grid.kx_odd * uh[..., 0, :, :] + 1j * self.grid.ky_odd * uh[..., 1, :, :]
        return float(np.abs(to_physical(div, self.grid)).max()), float(np.abs(uh[..., 0, 0]).max())

    def validate(self, tol: float = 1e-11) -> None:
        """Check that the ocean velocity is divergence-free with zero mean."""
        div, mean = self.ocean_defect()
        scale = max(1.0, float(np.abs(self.u_o).max()))
        if div > tol * scale or mean > tol * scale:
            raise ValueError(f"ocean velocity not in V^o: max|div|={div:.3e}, |mean|={mean:.3e}")


@dataclass
class CoriolisField:
    """Coriolis parameter ``f`` and its periodic vector potential ``R``.

    ``R = (-dy chi, dx chi)`` with ``Lap chi = f``, so ``curl R = f`` and
    ``R`` has zero mean.  ``f`` must have zero mean for ``R`` to exist.
    """

    grid: Grid
    f: np.ndarray
    R: np.ndarray = field(default=None)

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != self.grid.shape:
            raise DimensionError("Coriolis parameter must live on the grid")
        fh = to_spectral(self.f, self.grid)
        chi = invert_laplacian(fh, self.grid, rtol=1e-10)
        if self.R is None:
            g = self.grid
            self.R = to_physical(np.stack([-1j * g.ky_odd * chi, 1j * g.kx_odd * chi]), g)

    @classmethod
    def sinusoidal(cls, grid: Grid, f0: float = 1.0) -> "CoriolisField":
        """``f = f0 sin(2 pi y / L)``, a periodic beta-plane-like profile."""
        _, Y = grid.mesh
        return cls(grid, f0 * np.sin(2 * np.pi * Y / grid.L))

    @classmethod
    def zero(cls, grid: Grid) -> "CoriolisField":
        return cls(grid, np.zeros(grid.shape))

    @cached_property
    def f_hat(self) -> np.ndarray:
        return to_spectral(self.f, self.grid)

    @cached_property
    def R_hat(self) -> np.ndarray:
        return to_spectral(self.R, self.grid)


@dataclass
class PhysParams:
    """Nondimensional constants of the coupled model.

    Reynolds and Peclet numbers may be ``inf`` for ideal dynamics.  The
    coupling constants ``gamma`` and ``sigma`` are used with the sign given
    by the user; the physical regime has both non-positive.
    """

    coriolis: CoriolisField
    Ro_a: float = 1.0
    Ro_o: float = 1.0
    Re_a: float = np.inf
    Re_o: float = np.inf
    Pe_a: float = np.inf
    Pe_o: float = np.inf
    gamma: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("Ro_a", "Ro_o", "Re_a", "Re_o", "Pe_a", "Pe_o"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("gamma", "sigma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def grid(self) -> Grid:
        return self.coriolis.grid

    def diffusivities(self) -> np.ndarray:
        """Per-component diffusion coefficients, shape ``(6, 1, 1)``."""
        inv = [1 / self.Re_a, 1 / self.Re_a, 1 / self.Pe_a, 1 / self.Re_o, 1 / self.Re_o, 1 / self.Pe_o]
        return np.array(inv, dtype=float)[:, None, None]


@dataclass(frozen=True)
class TruncationConfig:
    """Smooth cut-off ``g_R`` of the transport term in the ``H^s`` norm."""

    R_cut: float = np.inf
    delta: float = 1.0
    s: int = 2

    def __post_init__(self):
        if not self.R_cut > 0:
            raise ValueError("R_cut must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if int(self.s) != self.s or self.s < 0:
            raise ValueError("s must be a non-negative integer")


# ---------------------------------------------------------------------------
# spectral kernels on raw arrays


def project_ocean(uh: np.ndarray, grid: Grid) -> np.ndarray:
    """Leray projection followed by mean removal (the space ``V^o``)."""
    return remove_space_mean(leray(uh, grid))


def perp(u: np.ndarray) -> np.ndarray:
    """Rotate a vector field by +90 degrees: ``z x u = (-u_y, u_x)``."""
    return np.stack([-u[..., 1, :, :], u[..., 0, :, :]], axis=-3)


def _gradients(hat: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    gx = to_physical(1j * grid.kx_odd * hat, grid)
    gy = to_physical(1j * grid.ky_odd * hat, grid)
    return gx, gy


def _advection_phys(data: np.ndarray, hat: np.ndarray, grid: Grid, grads=None) -> np.ndarray:
    """Undealiased ``u_a . grad psi_a`` and ``u_o . grad psi_o`` in physical space."""
    gx, gy = _gradients(hat, grid) if grads is None else grads
    adv = np.empty_like(data)
    adv[..., ATMOS, :, :] = data[..., 0:1, :, :] * gx[..., ATMOS, :, :] + data[..., 1:2, :, :] * gy[..., ATMOS, :, :]
    adv[..., OCEAN, :, :] = data[..., 3:4, :, :] * gx[..., OCEAN, :, :] + data[..., 4:5, :, :] * gy[..., OCEAN, :, :]
    return adv


def _rotation_phys(data: np.ndarray, params: PhysParams) -> np.ndarray:
    """``f u^perp / Ro`` for both velocities, zeros for temperatures."""
    f = params.coriolis.f
    out = np.zeros_like(data)
    out[..., U_A, :, :] = f * perp(data[..., U_A, :, :]) / params.Ro_a
    out[..., U_O, :, :] = f * perp(data[..., U_O, :, :]) / params.Ro_o
    return out


def _buoyancy_hat(hat: np.ndarray, params: PhysParams) -> np.ndarray:
    g = params.grid
    out = np.zeros_like(hat)
    th = hat[..., THETA_A, :, :]
    out[..., 0, :, :] = 1j * g.kx_odd * th / params.Ro_a
    out[..., 1, :, :] = 1j * g.ky_odd * th / params.Ro_a
    return out


def _finish_ocean(th: np.ndarray, grid: Grid) -> np.ndarray:
    th[..., U_O, :, :] = project_ocean(th[..., U_O, :, :], grid)
    return th


def mean_solenoidal(u_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """``remove_space_mean(leray(u))`` of an atmospheric velocity."""
    return remove_space_mean(leray(u_hat, grid))


def _coupling_hat(hat: np.ndarray, ubar_hat: np.ndarray, params: PhysParams) -> np.ndarray:
    out = np.zeros_like(hat)
    if params.gamma:
        out[..., THETA_A, :, :] = params.gamma * (hat[..., THETA_A, :, :] - hat[..., THETA_O, :, :])
    if params.sigma:
        out[..., U_O, :, :] = params.sigma * (hat[..., U_O, :, :] - ubar_hat)
    return out


def _dissipation_hat(hat: np.ndarray, params: PhysParams) -> np.ndarray:
    nu = params.diffusivities()
    return -params.grid.k2 * hat * nu


def cutoff_g(x, cfg: TruncationConfig):
    """Smooth cut-off: 1 below ``R_cut``, 0 above ``R_cut + delta``.

    The bridge ``(1 + cos(pi (x - R) / delta)) / 2`` is C1 and monotone.
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("cut-off argument must be non-negative")
    if not np.isfinite(cfg.R_cut):
        g = np.ones_like(x)
    else:
        z = np.clip((x - cfg.R_cut) / cfg.delta, 0.0, 1.0)
        g = np.where(x <= cfg.R_cut, 1.0, np.where(z >= 1.0, 0.0, 0.5 * (1 + np.cos(np.pi * z))))
    return float(g) if g.ndim == 0 else g


def state_norm(data: np.ndarray, grid: Grid, s: int, hat: np.ndarray | None = None) -> np.ndarray:
    """``H^s`` norm of each state in a batch."""
    if hat is None:
        hat = to_spectral(data, grid)
    return sobolev_norm(hat, s, grid)


def _transport_rotation_hat(x: np.ndarray, xh: np.ndarray, grid: Grid, f_over_ro: np.ndarray,
                            g: np.ndarray, grads=None, extra_phys=None) -> np.ndarray:
    """``-dealias(f u^perp / Ro + g u . grad x + extra)`` for one fluid ``(u_x, u_y, theta)``."""
    phys = np.zeros_like(x)
    phys[..., 0:2, :, :] = f_over_ro * perp(x[..., 0:2, :, :])
    if np.any(g != 0):
        gx, gy = _gradients(xh, grid) if grads is None else grads
        phys += g * (x[..., 0:1, :, :] * gx + x[..., 1:2, :, :] * gy)
    if extra_phys is not None:
        phys += extra_phys
    return -dealias(to_spectral(phys, grid), grid)


def atmos_rhs_hat(atm: np.ndarray, atm_hat: np.ndarray, theta_o_hat: np.ndarray, params: PhysParams,
                  transport_factor, grads=None, extra_phys=None) -> np.ndarray:
    """Atmospheric rows of :func:`rhs_hat` for arrays ``(..., 3, n, n)``."""
    grid = params.grid
    g = np.asarray(transport_factor, dtype=float)[..., None, None, None]
    out = _transport_rotation_hat(atm, atm_hat, grid, params.coriolis.f / params.Ro_a, g, grads, extra_phys)
    th = atm_hat[..., 2, :, :]
    out[..., 0, :, :] -= 1j * grid.kx_odd * th / params.Ro_a
    out[..., 1, :, :] -= 1j * grid.ky_odd * th / params.Ro_a
    if params.gamma:
        out[..., 2, :, :] -= params.gamma * (th - theta_o_hat)
    out -= grid.k2 * atm_hat * params.diffusivities()[ATMOS]
    return out


def ocean_rhs_hat(oc: np.ndarray, oc_hat: np.ndarray, ubar_hat: np.ndarray, params: PhysParams,
                  transport_factor, grads=None) -> np.ndarray:
    """Ocean rows of :func:`rhs_hat` for arrays ``(..., 3, n, n)``, velocity projected."""
    grid = params.grid
    g = np.asarray(transport_factor, dtype=float)[..., None, None, None]
    out = _transport_rotation_hat(oc, oc_hat, grid, params.coriolis.f / params.Ro_o, g, grads)
    if params.sigma:
        out[..., 0:2, :, :] -= params.sigma * (oc_hat[..., 0:2, :, :] - ubar_hat)
    out -= grid.k2 * oc_hat * params.diffusivities()[OCEAN]
    out[..., 0:2, :, :] = project_ocean(out[..., 0:2, :, :], grid)
    return out


def rhs_hat(data: np.ndarray, params: PhysParams, trunc: TruncationConfig,
            ubar_hat: np.ndarray | None = None, hat: np.ndarray | None = None,
            transport_factor: np.ndarray | None = None, grads=None,
            extra_phys: np.ndarray | None = None) -> np.ndarray:
    """Spectral right-hand side for a batch of states.

    Parameters
    ----------
    data : ndarray, shape (..., 6, n, n)
    ubar_hat : ndarray, optional
        Spectral ``mean_solenoidal`` of the atmospheric velocity used by the
        ocean coupling; defaults to each state's own ``u_a``.
    transport_factor : ndarray, optional
        Precomputed ``g_R`` per batch entry.
    grads : tuple of ndarray, optional
        Physical x and y derivatives of ``data``, reused if already known.
    extra_phys : ndarray, shape (..., 3, n, n), optional
        Physical-space atmospheric term subtracted together with the
        nonlinear products, sharing their transform and dealiasing.
    """
    grid = params.grid
    if hat is None:
        hat = to_spectral(data, grid)
    if ubar_hat is None:
        ubar_hat = mean_solenoidal(hat[..., U_A, :, :], grid)
    if transport_factor is None:
        transport_factor = cutoff_g(state_norm(data, grid, trunc.s, hat), trunc)
    ga = go = None
    if grads is not None:
        ga = (grads[0][..., ATMOS, :, :], grads[1][..., ATMOS, :, :])
        go = (grads[0][..., OCEAN, :, :], grads[1][..., OCEAN, :, :])
    out = np.empty_like(hat)
    out[..., ATMOS, :, :] = atmos_rhs_hat(data[..., ATMOS, :, :], hat[..., ATMOS, :, :], hat[..., THETA_O, :, :],
                                          params, transport_factor, ga, extra_phys)
    out[..., OCEAN, :, :] = ocean_rhs_hat(data[..., OCEAN, :, :], hat[..., OCEAN, :, :], ubar_hat,
                                          params, transport_factor, go)
    return out


# ---------------------------------------------------------------------------
# public operators


def _as_state(psi) -> StateVector:
    if not isinstance(psi, StateVector):
        raise TypeError("expected a StateVector")
    return psi


def _wrap(th: np.ndarray, grid: Grid) -> StateVector:
    return StateVector(grid, to_physical(th, grid))


def transport_B(psi: StateVector) -> StateVector:
    """Dealiased transport ``(u_a.grad u_a, u_a.grad theta_a, u_o.grad u_o, u_o.grad theta_o)``.

    The ocean velocity part is projected onto divergence-free, zero-mean fields.
    """
    psi = _as_state(psi)
    g = psi.grid
    hat = psi.spectral()
    th = dealias(to_spectral(_advection_phys(psi.data, hat, g), g), g)
    return _wrap(_finish_ocean(th, g), g)


def linear_C(psi: StateVector, params: PhysParams) -> StateVector:
    """Rotation and buoyancy: ``((f u_a^perp + grad theta_a)/Ro_a, 0, P(f u_o^perp)/Ro_o, 0)``."""
    psi = _as_state(psi)
    g = psi.grid
    hat = psi.spectral()
    th = dealias(to_spectral(_rotation_phys(psi.data, params), g), g) + _buoyancy_hat(hat, params)
    return _wrap(_finish_ocean(th, g), g)


def coupling_D(psi: StateVector, expected_u_a: np.ndarray, params: PhysParams) -> StateVector:
    """Air-sea coupling ``(0, gamma (theta_a - theta_o), P sigma (u_o - ubar_sol), 0)``.

    Parameters
    ----------
    expected_u_a : ndarray, shape (..., 2, n, n)
        Atmospheric velocity seen by the ocean: ``psi.u_a`` for a single
        deterministic state, an ensemble mean otherwise.  Only its
        solenoidal, mean-free part enters.
    """
    psi = _as_state(psi)
    g = psi.grid
    eu = np.asarray(expected_u_a, dtype=float)
    if eu.ndim < 3 or eu.shape[-3:] != (2, *g.shape):
        raise DimensionError(f"expected velocity must end in (2, {g.n}, {g.n}), got {eu.shape}")
    ubar = mean_solenoidal(to_spectral(eu, g), g)
    th = _coupling_hat(psi.spectral(), ubar, params)
    return _wrap(_finish_ocean(th, g), g)


def dissipation_L(psi: StateVector, params: PhysParams) -> StateVector:
    """Componentwise ``Lap / Re`` and ``Lap / Pe``; exactly zero when inviscid."""
    psi = _as_state(psi)
    return _wrap(_dissipation_hat(psi.spectral(), params), psi.grid)


def pressure_recover(psi: StateVector) -> np.ndarray:
    """Ocean pressure: zero-mean ``p`` with ``Lap p = div(u_o.grad u_o + grad q_a)``.

    ``q_a`` is the gradient potential of the atmospheric velocity.
    Returns the physical field.
    """
    psi = _as_state(psi)
    g = psi.grid
    hat = psi.spectral()
    gx, gy = _gradients(hat[..., U_O, :, :], g)
    uo = psi.u_o
    adv = uo[..., 0:1, :, :] * gx + uo[..., 1:2, :, :] * gy
    adv_h = dealias(to_spectral(adv, g), g)
    _, q = leray_helmholtz(hat[..., U_A, :, :], g)
    div = 1j * g.kx_odd * adv_h[..., 0, :, :] + 1j * g.ky_odd * adv_h[..., 1, :, :]
    p_hat = invert_laplacian(remove_space_mean(div), g) + q
    return to_physical(p_hat, g)


def rhs_deterministic(psi: StateVector, params: PhysParams, trunc: TruncationConfig,
                      expected_u_a: np.ndarray | None = None) -> StateVector:
    """Truncated tendency ``L psi - g_R B(psi, psi) - C psi - D(psi)``.

    Raises
    ------
    NumericalBlowupError
        If the state or the tendency contains NaN or Inf.
    """
    psi = _as_state(psi)
    g = psi.grid
    if not np.all(np.isfinite(psi.data)):
        raise NumericalBlowupError("non-finite state")
    ubar = None
    if expected_u_a is not None:
        ubar = mean_solenoidal(to_spectral(np.asarray(expected_u_a, float), g), g)
    out = to_physical(rhs_hat(psi.data, params, trunc, ubar), g)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("non-finite tendency")
    return StateVector(g, out)


def project_state(data: np.ndarray, grid: Grid) -> np.ndarray:
    """Restrict a state to retained modes with an admissible ocean velocity."""
    hat = dealias(to_spectral(data, grid), grid)
    return to_physical(_finish_ocean(hat, grid), grid)


def random_state(grid: Grid, rng: np.random.Generator, kmax: int = 4,
                 amplitude: float = 1.0, batch: tuple[int, ...] = ()) -> StateVector:
    """Band-limited random state with modes ``|n| <= kmax``.

    Each component is scaled to root-mean-square ``amplitude`` before the
    ocean velocity is projected.  Means are zero.
    """
    shape = batch + (6,)
    ny, nx = grid.mode_y, sfft_modes(grid)
    keep = (nx**2 + ny**2 <= kmax**2) & ((nx != 0) | (ny != 0))
    coef = (rng.standard_normal(shape + (grid.n, grid.n)) + 1j * rng.standard_normal(shape + (grid.n, grid.n))) * keep
    f = np.fft.ifft2(coef).real
    rms = np.sqrt((f**2).mean(axis=(-2, -1), keepdims=True))
    f = amplitude * f / np.where(rms > 0, rms, 1.0)
    return StateVector(grid, project_state(f, grid))


def sfft_modes(grid: Grid) -> np.ndarray:
    """Full-spectrum x mode numbers, shape ``(1, n)``."""
    return grid.mode_y.T
