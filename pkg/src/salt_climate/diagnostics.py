"""Diagnostics that turn conservation laws into measurable numbers.

* circulation of ``u + R / Ro`` around material loops,
* potential vorticity, Casimirs and energy of the compressible model,
* the ensemble variance of atmospheric fluctuations and its predicted rate.

Loops are contractible and stored in unwrapped coordinates, so each one is
a periodic curve in the plane; field values come from exact evaluation of the
Fourier series, so positions outside ``[0, L)`` are fine.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

from .dynamics import CompressibleState, Ensemble, PositivityError, advance, marker_noise, marker_velocity
from .model_ops import ATMOS, PhysParams, StateVector
from .noise import NoiseBasis, lie_pair_phys
from .spectral import Grid, dealias, to_physical, to_spectral


# ---------------------------------------------------------------------------
# material loops


def loop_spacing(points: np.ndarray) -> np.ndarray:
    """Largest distance between consecutive points, per loop."""
    d = np.roll(points, -1, axis=-2) - points
    return np.sqrt((d**2).sum(axis=-1)).max(axis=-1)


def fourier_resample(points: np.ndarray, K_new: int) -> np.ndarray:
    """Trigonometric interpolation of closed curves ``(..., K, 2)`` to ``K_new`` points."""
    K = points.shape[-2]
    if K_new < K:
        raise ValueError("resampling only refines")
    c = sfft.rfft(points, axis=-2, norm="forward")
    pad = np.zeros(points.shape[:-2] + (K_new // 2 + 1, 2), dtype=complex)
    m = K // 2 + 1
    pad[..., :m, :] = c
    if K % 2 == 0:
        # split the old Nyquist mode between +/- frequencies
        pad[..., K // 2, :] *= 0.5
    return sfft.irfft(pad, n=K_new, axis=-2, norm="forward")


def resample_if_stretched(points: np.ndarray, threshold: float, max_points: int = 1 << 14) -> np.ndarray:
    """Double the point count until all spacings are below ``threshold``."""
    while float(np.max(loop_spacing(points))) > threshold and points.shape[-2] * 2 <= max_points:
        points = fourier_resample(points, 2 * points.shape[-2])
    return points


@dataclass
class MaterialLoop:
    """A closed curve of ``K`` ordered points (or a batch ``(N, K, 2)``).

    Parameters
    ----------
    points : ndarray, shape (..., K, 2)
    grid : Grid
        Sets the resampling threshold ``4 dx``.
    """

    points: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim < 2 or self.points.shape[-1] != 2:
            raise ValueError("loop points must have shape (..., K, 2)")

    @classmethod
    def circle(cls, grid: Grid, center=(np.pi, np.pi), radius: float = 1.0, K: int = 256) -> "MaterialLoop":
        s = 2 * np.pi * np.arange(K) / K
        pts = np.stack([center[0] + radius * np.cos(s), center[1] + radius * np.sin(s)], axis=-1)
        return cls(pts, grid)

    @property
    def K(self) -> int:
        return self.points.shape[-2]

    @property
    def threshold(self) -> float:
        return 4.0 * self.grid.dx

    def spacing(self) -> np.ndarray:
        return loop_spacing(self.points)

    def needs_resample(self) -> bool:
        return bool(np.max(self.spacing()) > self.threshold)

    def resample(self) -> "MaterialLoop":
        return MaterialLoop(resample_if_stretched(self.points, self.threshold), self.grid)


def advect_loop(loop: MaterialLoop, velocity: np.ndarray, basis: NoiseBasis | None = None,
                increments: np.ndarray | None = None, dt: float = 0.0, mode: str = "rk3") -> MaterialLoop:
    """Move loop points one step along a frozen velocity field plus transport noise.

    Solves ``dX = u(X) dt + sum_i xi_i(X) o dW_i`` with the chosen stage
    scheme (``"rk3"``, ``"heun"`` or ``"euler_maruyama"``; the noise is
    Stratonovich for the first two) and then refines stretched loops.

    Parameters
    ----------
    velocity : ndarray, shape (2, n, n)
        Physical velocity, held fixed over the step.
    increments : ndarray, shape (M,), optional
    """
    g = loop.grid
    vh = to_spectral(np.asarray(velocity, dtype=float), g)
    M = 0 if basis is None else basis.M
    if M:
        if increments is None:
            raise ValueError("increments are required with a non-empty basis")
        xi_hat = to_spectral(basis.fields, g)
        dW = np.asarray(increments, dtype=float)

    def incr(ys):
        v = marker_velocity(vh, ys[0], g) * dt
        if M:
            v = v + marker_noise(xi_hat, ys[0], dW, g)
        return [v]

    pts = advance([loop.points], incr, mode)[0]
    return MaterialLoop(pts, g).resample()


def circulation(loop, u: np.ndarray, coriolis=None, Ro: float = 1.0, method: str = "spectral",
                grid: Grid | None = None) -> np.ndarray:
    """Line integral of ``(u + R / Ro) . dx`` around a closed loop.

    Parameters
    ----------
    loop : MaterialLoop or ndarray (..., K, 2)
    u : ndarray, shape (..., 2, n, n)
        Physical velocity; a leading batch axis pairs with batched loops.
    coriolis : CoriolisField, optional
        Omitted or ``Ro = inf`` drops the planetary part.
    method : {"spectral", "trapezoid"}
        ``"spectral"`` differentiates the periodic parametrization with an
        FFT and applies the trapezoidal rule in the loop parameter, which is
        spectrally accurate for smooth loops.  ``"trapezoid"`` averages the
        endpoint values on each chord.
    grid : Grid, optional
        Needed when ``loop`` is a bare array and ``coriolis`` is omitted.
    """
    pts = loop.points if isinstance(loop, MaterialLoop) else np.asarray(loop, dtype=float)
    K = pts.shape[-2]
    if K < 3:
        raise ValueError("a loop needs at least three points")
    u = np.asarray(u, dtype=float)
    if isinstance(loop, MaterialLoop):
        grid = loop.grid
    elif grid is None:
        if coriolis is None:
            raise ValueError("a grid is required for bare point arrays")
        grid = coriolis.grid
    v = u
    if coriolis is not None and np.isfinite(Ro):
        v = u + coriolis.R / Ro
    vh = to_spectral(v, grid)
    vals = marker_velocity(vh, pts, grid)  # (..., K, 2)
    if method == "spectral":
        c = sfft.rfft(pts, axis=-2)
        m = np.arange(c.shape[-2])
        if K % 2 == 0:
            m[-1] = 0
        tangent = sfft.irfft(c * (2j * np.pi * m)[:, None], n=K, axis=-2)
        return (vals * tangent).sum(axis=(-2, -1)) / K
    if method == "trapezoid":
        d = np.roll(pts, -1, axis=-2) - pts
        mid = 0.5 * (vals + np.roll(vals, -1, axis=-2))
        return (mid * d).sum(axis=(-2, -1))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# compressible model


def potential_vorticity(state: CompressibleState) -> np.ndarray:
    """``q = (curl u + f / Ro) / (D theta)`` on the grid.

    Raises
    ------
    PositivityError
        If ``D theta`` is not positive everywhere.
    """
    g = state.grid
    m = state.D * state.theta
    if np.any(m <= 0):
        raise PositivityError("D theta must be positive to define potential vorticity")
    uh = to_spectral(state.u, g)
    om = to_physical(1j * g.kx_odd * uh[1] - 1j * g.ky_odd * uh[0], g)
    return (om + state.params.coriolis.f / state.params.Ro) / m


def casimir(state: CompressibleState, phi) -> float:
    """``int (D theta) phi(q) dx dy`` by grid quadrature."""
    q = potential_vorticity(state)
    g = state.grid
    return float((state.D * state.theta * phi(q)).sum() * g.dx**2)


def energy_sam(state: CompressibleState) -> float:
    """``int D |u|^2 / 2 + kappa (D theta)^alpha dx dy``."""
    g = state.grid
    p = state.params
    dens = 0.5 * state.D * (state.u**2).sum(axis=0) + p.kappa * (state.D * state.theta) ** p.alpha
    return float(dens.sum() * g.dx**2)


# ---------------------------------------------------------------------------
# ensemble statistics


def _members_atmos(ens) -> np.ndarray:
    data = ens.members.data if isinstance(ens, Ensemble) else np.asarray(ens, dtype=float)
    if data.ndim != 4 or data.shape[0] < 1:
        raise ValueError("ensemble needs at least one member")
    return data[:, ATMOS] if data.shape[1] == 6 else data


def _expectation_atmos(expectation) -> np.ndarray:
    e = expectation.data if isinstance(expectation, StateVector) else np.asarray(expectation, dtype=float)
    return e[ATMOS] if e.shape[0] == 6 else e


def ensemble_variance(ens, expectation, grid: Grid | None = None) -> float:
    """``Theta = mean over members of ||psi_a - E psi_a||^2_{L2}``.

    Parameters
    ----------
    ens : Ensemble or ndarray (N, 6 or 3, n, n)
    expectation : StateVector or ndarray (6 or 3, n, n)
    """
    a = _members_atmos(ens)
    grid = ens.grid if isinstance(ens, Ensemble) else (grid or Grid(n=a.shape[-1]))
    diff = a - _expectation_atmos(expectation)
    return float((diff**2).sum(axis=(1, 2, 3)).mean() * grid.dx**2)


def fluctuation_operator_hat(fl: np.ndarray, expectation_atmos: np.ndarray, params: PhysParams,
                             basis: NoiseBasis) -> np.ndarray:
    """Spectral ``F psi~``, the operator with ``d psi~ = -F psi~ dt - sum E_i(psi) o dW``.

    ``F psi~ = (A_E u~ + grad theta~ / Ro, E_u . grad theta~ + gamma theta~)
    - 1/2 sum_i A_i^2 psi~ - nu Lap psi~`` where ``A_E u = E_u . grad u +
    u_j grad E_u^j`` and ``A_i`` is the linear part of the noise operator.
    """
    g = params.grid
    eu = expectation_atmos[0:2]
    euh = to_spectral(eu, g)
    dx = to_physical(1j * g.kx_odd * euh, g)
    dy = to_physical(1j * g.ky_odd * euh, g)
    hat = to_spectral(fl, g)
    gx = to_physical(1j * g.kx_odd * hat, g)
    gy = to_physical(1j * g.ky_odd * hat, g)
    out = dealias(to_spectral(lie_pair_phys(fl, gx, gy, eu, dx, dy), g), g)
    out[..., 0, :, :] += 1j * g.kx_odd * hat[..., 2, :, :] / params.Ro_a
    out[..., 1, :, :] += 1j * g.ky_odd * hat[..., 2, :, :] / params.Ro_a
    out[..., 2, :, :] += params.gamma * hat[..., 2, :, :]
    out += g.k2 * hat * params.diffusivities()[ATMOS]
    if basis.M:
        ops = basis.operators(params)
        grads = (gx, gy)
        for i in range(ops.M):
            w = ops.linear(fl, ops.xi[i], ops.dxi_x[i], ops.dxi_y[i], grads=grads)
            out -= 0.5 * ops.linear(to_physical(w, g), ops.xi[i], ops.dxi_x[i], ops.dxi_y[i], w)
    return out


def variance_rhs(ens, expectation, params: PhysParams, basis: NoiseBasis, chunk: int = 32) -> float:
    """Predicted ``dTheta/dt = -2 E<psi~, F psi~> + sum_i E ||E_i(psi)||^2``.

    ``psi~`` is the atmospheric fluctuation about ``expectation``; the noise
    operators act on the full member state including their constant part.
    """
    a = _members_atmos(ens)
    g = params.grid
    e = _expectation_atmos(expectation)
    ops = basis.operators(params) if basis.M else None
    total = 0.0
    for start in range(0, a.shape[0], chunk):
        mem = a[start:start + chunk]
        fl = mem - e
        fh = to_physical(fluctuation_operator_hat(fl, e, params, basis), g)
        total += -2.0 * float((fl * fh).sum())
        if ops is not None:
            hat = to_spectral(mem, g)
            grads = (to_physical(1j * g.kx_odd * hat, g), to_physical(1j * g.ky_odd * hat, g))
            for i in range(ops.M):
                w = to_physical(ops.apply(mem, i, grads=grads), g)
                total += float((w**2).sum())
    return total * g.dx**2 / a.shape[0]


# ---------------------------------------------------------------------------
# records


CSV_COLUMNS = ("t", "circulation_a", "circulation_o", "energy", "casimir_q2", "theta_variance",
               "variance_rhs", "h_s_norm_det", "h_s_norm_mean", "member_frozen_count")


@dataclass
class DiagnosticsRecord:
    """One row of the diagnostics table; unavailable entries are NaN."""

    t: float
    circulation_a: float = np.nan
    circulation_o: float = np.nan
    energy: float = np.nan
    casimir_q2: float = np.nan
    theta_variance: float = np.nan
    variance_rhs: float = np.nan
    h_s_norm_det: float = np.nan
    h_s_norm_mean: float = np.nan
    member_frozen_count: int = 0
    casimirs: list = field(default_factory=list)

    def row(self) -> list:
        d = asdict(self)
        return [d[c] for c in CSV_COLUMNS]

    def is_finite(self) -> bool:
        return all(np.isfinite(float(x)) for x in self.row())


def state_energy(data: np.ndarray, grid: Grid) -> float:
    """Quadratic energy ``1/2 ||psi||^2_{L2}`` of a coupled state (mean over a batch)."""
    e = 0.5 * (np.asarray(data) ** 2).sum(axis=(-3, -2, -1)) * grid.dx**2
    return float(np.mean(e))


__all__ = [
    "CSV_COLUMNS",
    "DiagnosticsRecord",
    "MaterialLoop",
    "advect_loop",
    "casimir",
    "circulation",
    "energy_sam",
    "ensemble_variance",
    "fluctuation_operator_hat",
    "fourier_resample",
    "loop_spacing",
    "potential_vorticity",
    "resample_if_stretched",
    "state_energy",
    "variance_rhs",
]
