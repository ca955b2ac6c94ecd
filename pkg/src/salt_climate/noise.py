"""Transport noise: vector fields ``xi_i``, Brownian increments and the
operators that couple them to the atmosphere.

For a velocity 1-form ``v`` the Lie derivative along ``xi`` is

    L_xi v = xi . grad v + v_j grad xi^j = grad(xi . v) + curl(v) xi^perp

and the atmospheric noise operator acts on ``(u, theta)`` as

    E_xi(u, theta) = (L_xi (u + R / Ro), xi . grad theta).

The constant part ``L_xi R / Ro = (f xi^perp + grad(R . xi)) / Ro`` does not
depend on the state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model_ops import PhysParams, perp
from .spectral import Grid, dealias, leray, to_physical, to_spectral


class StochasticMode(enum.Enum):
    """Interpretation of the stochastic integral."""

    STRATONOVICH = "stratonovich"
    ITO = "ito"


# ---------------------------------------------------------------------------
# counter-based normal generator

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to uint64 arrays."""
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def counter_normals(seed: int, member, step, index) -> np.ndarray:
    """Standard normals that depend only on ``(seed, member, step, index)``.

    The inputs broadcast against each other.  A SplitMix64 hash chain turns
    the counter tuple into two 53-bit uniforms which Box-Muller maps to one
    normal variate.
    """
    s = np.uint64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    m = np.asarray(member, dtype=np.uint64)
    t = np.asarray(step, dtype=np.uint64)
    i = np.asarray(index, dtype=np.uint64)
    key = _mix(_mix(_mix(_mix(np.full((), s)) ^ m) ^ t) ^ i)
    r1 = _mix(key ^ np.uint64(1)) >> np.uint64(11)
    r2 = _mix(key ^ np.uint64(2)) >> np.uint64(11)
    u1 = (r1.astype(float) + 0.5) / 2.0**53
    u2 = (r2.astype(float) + 0.5) / 2.0**53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class BrownianDriver:
    """Reproducible Wiener increments on a fixed step ``dt``.

    Increment ``i`` of member ``m`` on step ``k`` is
    ``sqrt(dt) * counter_normals(seed, m, k, i)``; no state is carried, so
    any member or step can be regenerated independently.
    """

    seed: int
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def increments(self, members, step: int, M: int) -> np.ndarray:
        """Array of shape ``(len(members), M)``."""
        members = np.atleast_1d(np.asarray(members, dtype=np.int64))
        if M == 0:
            return np.zeros((members.size, 0))
        z = counter_normals(self.seed, members[:, None], step, np.arange(M)[None, :])
        return np.sqrt(self.dt) * z


def sample_increments(driver: BrownianDriver, member: int, step: int, M: int) -> np.ndarray:
    """``M`` independent ``Normal(0, dt)`` increments for one member and step."""
    if M < 0:
        raise ValueError("M must be non-negative")
    return driver.increments([member], step, M)[0]


# ---------------------------------------------------------------------------
# noise basis


def _cm_norm(f: np.ndarray, m: int, grid: Grid) -> float:
    """``sum_{|a|<=m} max_x |D^a f(x)|`` for a vector field on the grid."""
    fh = to_spectral(f, grid)
    total = 0.0
    for ax in range(m + 1):
        for ay in range(m + 1 - ax):
            d = to_physical(fh * grid.multiplier((ax, ay)), grid)
            total += float(np.sqrt((d**2).sum(axis=0)).max())
    return total


@dataclass
class NoiseBasis:
    """Finite family of transport vector fields.

    Parameters
    ----------
    grid : Grid
    xis : ndarray, shape (M, 2, n, n)
        Physical components of ``xi_1 .. xi_M``.
    sign : {1, -1}
        Orientation of the noise in the Lagrangian path
        ``dx = u dt + sign * sum_i xi_i o dW^i``; every operator uses
        ``sign * xi_i``.
    """

    grid: Grid
    xis: np.ndarray
    sign: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.xis = np.asarray(self.xis, dtype=float).reshape(-1, 2, *self.grid.shape)
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @classmethod
    def empty(cls, grid: Grid) -> "NoiseBasis":
        return cls(grid, np.zeros((0, 2, *grid.shape)))

    @property
    def M(self) -> int:
        return self.xis.shape[0]

    @property
    def fields(self) -> np.ndarray:
        """Signed fields ``sign * xi_i``."""
        return self.sign * self.xis

    def regularity_sum(self, s: int = 2) -> float:
        """``sum_i ||xi_i||_{s+3, inf}^2`` evaluated on the grid."""
        return float(sum(_cm_norm(x, s + 3, self.grid) ** 2 for x in self.xis))

    def operators(self, params: PhysParams) -> "TransportNoise":
        key = id(params)
        op = self._cache.get(key)
        if op is None or op.params is not params:
            op = TransportNoise(self, params)
            self._cache[key] = op
        return op


def default_xi_basis(grid: Grid, M: int, amplitude: float = 0.05, decay: float = 2.0,
                     solenoidal: bool = False, sign: int = 1) -> NoiseBasis:
    """Trigonometric noise fields with power-law amplitude decay.

    With ``m = ceil(i / 2)`` and ``x' = 2 pi x / L``:

    * odd ``i``: ``xi_i = a_i (sin(m y'), sin(m x'))`` (a rotational shear),
    * even ``i``: ``xi_i = a_i (cos(m x'), cos(m y'))`` (a compressive gradient),

    where ``a_i = amplitude * i**(-decay)``.

    Parameters
    ----------
    solenoidal : bool
        Replace each field by its divergence-free part.
    """
    if M < 0:
        raise ValueError("M must be non-negative")
    if not decay > 0:
        raise ValueError("decay must be positive")
    X, Y = grid.mesh
    xp, yp = 2 * np.pi * X / grid.L, 2 * np.pi * Y / grid.L
    xis = np.zeros((M, 2, *grid.shape))
    for i in range(1, M + 1):
        m = (i + 1) // 2
        a = amplitude * i ** (-decay)
        if i % 2:
            xis[i - 1] = a * np.stack([np.sin(m * yp), np.sin(m * xp)])
        else:
            xis[i - 1] = a * np.stack([np.cos(m * xp), np.cos(m * yp)])
    if solenoidal and M:
        xis = to_physical(leray(to_spectral(xis, grid), grid), grid)
    return NoiseBasis(grid, xis, sign)


# ---------------------------------------------------------------------------
# operators


class TransportNoise:
    """Precomputed noise operators for one basis and parameter set.

    Arrays of atmospheric pairs have shape ``(..., 3, n, n)`` in the order
    ``(u_x, u_y, theta)``.
    """

    def __init__(self, basis: NoiseBasis, params: PhysParams):
        self.basis = basis
        self.params = params
        self.grid = g = basis.grid
        self.xi = basis.fields  # (M, 2, n, n)
        xh = to_spectral(self.xi, g)
        self.dxi_x = to_physical(1j * g.kx_odd * xh, g)  # d/dx of xi^j
        self.dxi_y = to_physical(1j * g.ky_odd * xh, g)
        self.b_hat = affine_part_hat(self.xi, params)

    @property
    def M(self) -> int:
        return self.xi.shape[0]

    @cached_property
    def b(self) -> np.ndarray:
        return to_physical(self.b_hat, self.grid)

    def combine(self, dW: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Fields weighted by increments ``dW (..., M)``: ``sum_i dW_i (xi_i, dxi_i, b_i)``."""
        dW = np.asarray(dW, dtype=float)
        w = lambda a: np.tensordot(dW, a, axes=([-1], [0]))
        return w(self.xi), w(self.dxi_x), w(self.dxi_y), w(self.b_hat)

    def linear(self, phys: np.ndarray, xi, dxi_x, dxi_y, hat: np.ndarray | None = None,
               grads=None) -> np.ndarray:
        """Dealiased spectral ``(L_xi u, xi . grad theta)`` for given fields.

        ``xi`` and its derivatives may carry batch axes matching ``phys``;
        ``grads`` are the physical derivatives of ``phys`` if already known.
        """
        g = self.grid
        if grads is None:
            if hat is None:
                hat = to_spectral(phys, g)
            grads = (to_physical(1j * g.kx_odd * hat, g), to_physical(1j * g.ky_odd * hat, g))
        gx, gy = grads
        return dealias(to_spectral(lie_pair_phys(phys, gx, gy, xi, dxi_x, dxi_y), g), g)

    def apply(self, phys: np.ndarray, i: int, hat: np.ndarray | None = None, grads=None) -> np.ndarray:
        """Spectral ``E_i(psi_a)`` including the constant part."""
        out = self.linear(phys, self.xi[i], self.dxi_x[i], self.dxi_y[i], hat, grads)
        out[..., 0:2, :, :] += self.b_hat[i]
        return out

    def apply_combined(self, phys: np.ndarray, dW: np.ndarray, hat: np.ndarray | None = None) -> np.ndarray:
        """Spectral ``sum_i dW_i E_i(psi_a)`` with per-entry increments ``dW (..., M)``."""
        xi, dx, dy, b = self.combine(dW)
        out = self.linear(phys, xi, dx, dy, hat)
        out[..., 0:2, :, :] += b
        return out

    def ito_correction_hat(self, phys: np.ndarray, hat: np.ndarray | None = None, grads=None) -> np.ndarray:
        """Spectral ``1/2 sum_i A_i (A_i psi + b_i)`` where ``A_i`` is the linear part of ``E_i``."""
        g = self.grid
        out = np.zeros(phys.shape[:-2] + g.spectral_shape, dtype=complex)
        if hat is None and grads is None:
            hat = to_spectral(phys, g)
        if grads is None:
            grads = (to_physical(1j * g.kx_odd * hat, g), to_physical(1j * g.ky_odd * hat, g))
        for i in range(self.M):
            w_hat = self.apply(phys, i, grads=grads)
            w = to_physical(w_hat, g)
            out += self.linear(w, self.xi[i], self.dxi_x[i], self.dxi_y[i], w_hat)
        return 0.5 * out

    def double_lie_hat(self, phys: np.ndarray) -> np.ndarray:
        """Spectral ``-1/2 sum_i`` of the iterated Lie derivative via curl and divergence.

        Velocity: ``-1/2 [grad(xi . grad(xi . v)) + div(xi curl v) xi^perp]``
        with ``v = u + R / Ro``; temperature ``-1/2 xi . grad(xi . grad theta)``.
        """
        g = self.grid
        p = self.params
        v = phys[..., 0:2, :, :] + p.coriolis.R / p.Ro_a
        vh = to_spectral(v, g)
        om = to_physical(1j * g.kx_odd * vh[..., 1, :, :] - 1j * g.ky_odd * vh[..., 0, :, :], g)
        th_h = to_spectral(phys[..., 2, :, :], g)
        out = np.zeros(phys.shape[:-2] + g.spectral_shape, dtype=complex)
        for i in range(self.M):
            xi = self.xi[i]
            a = dealias(to_spectral(xi[0] * v[..., 0, :, :] + xi[1] * v[..., 1, :, :], g), g)
            da = _directional_hat(a, xi, g)
            out[..., 0, :, :] += 1j * g.kx_odd * da
            out[..., 1, :, :] += 1j * g.ky_odd * da
            fl = dealias(to_spectral(xi * om[..., None, :, :], g), g)
            div = to_physical(1j * g.kx_odd * fl[..., 0, :, :] + 1j * g.ky_odd * fl[..., 1, :, :], g)
            out[..., 0:2, :, :] += dealias(to_spectral(div[..., None, :, :] * perp(xi), g), g)
            out[..., 2, :, :] += _directional_hat(_directional_hat(th_h, xi, g), xi, g)
        return -0.5 * out


def _directional_hat(fh: np.ndarray, xi: np.ndarray, grid: Grid) -> np.ndarray:
    """Dealiased spectral ``xi . grad f``."""
    gx = to_physical(1j * grid.kx_odd * fh, grid)
    gy = to_physical(1j * grid.ky_odd * fh, grid)
    return dealias(to_spectral(xi[0] * gx + xi[1] * gy, grid), grid)


def lie_pair_phys(phys, gx, gy, xi, dxi_x, dxi_y) -> np.ndarray:
    """Undealiased ``(xi.grad u + u_j grad xi^j, xi.grad theta)`` from precomputed gradients."""
    out = np.empty(np.broadcast_shapes(phys.shape, xi.shape[:-3] + (3,) + xi.shape[-2:]))
    adv = xi[..., 0:1, :, :] * gx + xi[..., 1:2, :, :] * gy
    out[...] = adv
    u0, u1 = phys[..., 0, :, :], phys[..., 1, :, :]
    out[..., 0, :, :] += u0 * dxi_x[..., 0, :, :] + u1 * dxi_x[..., 1, :, :]
    out[..., 1, :, :] += u0 * dxi_y[..., 0, :, :] + u1 * dxi_y[..., 1, :, :]
    return out


def affine_part_hat(xi: np.ndarray, params: PhysParams) -> np.ndarray:
    """Dealiased spectral ``(f xi^perp + grad(R . xi)) / Ro_a`` for a stack of fields."""
    g = params.grid
    c = params.coriolis
    rot = c.f * perp(xi)
    rx = dealias(to_spectral(c.R[0] * xi[..., 0, :, :] + c.R[1] * xi[..., 1, :, :], g), g)
    out = dealias(to_spectral(rot, g), g)
    out[..., 0, :, :] += 1j * g.kx_odd * rx
    out[..., 1, :, :] += 1j * g.ky_odd * rx
    return out / params.Ro_a


def _pair(psi_a) -> np.ndarray:
    psi_a = np.asarray(psi_a, dtype=float)
    if psi_a.ndim < 3 or psi_a.shape[-3] != 3:
        raise ValueError("atmospheric pair must have shape (..., 3, n, n)")
    return psi_a


def salt_E(psi_a, xi, params: PhysParams) -> np.ndarray:
    """Transport noise operator for one field ``xi``.

    Parameters
    ----------
    psi_a : ndarray, shape (..., 3, n, n)
        Atmospheric velocity and temperature.
    xi : ndarray, shape (2, n, n)

    Returns
    -------
    ndarray, shape (..., 3, n, n)
        ``(xi.grad u + u_j grad xi^j + (f xi^perp + grad(R.xi)) / Ro, xi.grad theta)``.
    """
    basis = NoiseBasis(params.grid, np.asarray(xi, dtype=float)[None])
    op = TransportNoise(basis, params)
    return to_physical(op.apply(_pair(psi_a), 0), params.grid)


def ito_correction_salt(psi_a, basis: NoiseBasis, params: PhysParams) -> np.ndarray:
    """Stratonovich-to-Ito drift ``1/2 sum_i E_i(E_i psi_a)``.

    The constant part of the inner ``E_i`` is differentiated by the outer
    one; the outer constant is not added again.
    """
    psi_a = _pair(psi_a)
    if basis.M == 0:
        return np.zeros_like(psi_a)
    return to_physical(basis.operators(params).ito_correction_hat(psi_a), params.grid)


def lasalt_E2_explicit(u_hat, theta, basis: NoiseBasis, params: PhysParams) -> np.ndarray:
    """Second-order noise term of the expectation equation, written via curl and divergence.

    Returns the term as it appears on the left-hand side, i.e.
    ``-1/2 sum_i (grad(xi.grad(xi.v)) + div(xi curl v) xi^perp, xi.grad(xi.grad theta))``
    with ``v = u_hat + R / Ro``.  It equals ``-ito_correction_salt``.

    Parameters
    ----------
    u_hat : ndarray, shape (..., 2, n, n)
        Expected atmospheric velocity (physical values).
    theta : ndarray, shape (..., n, n)
        Expected atmospheric temperature.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phys = np.concatenate([u_hat, theta[..., None, :, :]], axis=-3)
    if basis.M == 0:
        return np.zeros_like(phys)
    return to_physical(basis.operators(params).double_lie_hat(phys), params.grid)
