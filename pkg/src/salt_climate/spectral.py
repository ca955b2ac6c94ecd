"""Fourier machinery on the doubly periodic square [0, L)^2.

Physical arrays are indexed ``[..., iy, ix]`` so the last axis is x.
Spectral coefficients use the real-to-complex layout of ``rfft2`` with
``norm="forward"``: the coefficient array has shape ``(..., n, n // 2 + 1)``
and the zero mode equals the spatial mean.  Every routine accepts arbitrary
leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft


class DimensionError(ValueError):
    """Array shape does not match the grid."""


class CompatibilityError(ValueError):
    """Poisson right-hand side with nonzero mean."""


@dataclass(frozen=True)
class Grid:
    """Uniform collocation grid on the periodic square.

    Parameters
    ----------
    L : float
        Side length of the periodic box.
    n : int
        Points per direction (even, at least 8).
    dealias_fraction : float
        Fraction of the resolvable band kept after each nonlinear product.
        A mode ``(nx, ny)`` is retained when ``|nx|, |ny| <= floor(f * n / 2)``;
        the default two thirds removes all quadratic aliasing.
    """

    L: float = 2 * np.pi
    n: int = 64
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"box length must be positive, got {self.L}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 8, got {self.n}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    # -- physical space -------------------------------------------------
    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def area(self) -> float:
        return self.L**2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @cached_property
    def coords(self) -> np.ndarray:
        """1-D node coordinates ``x_j = j L / n``."""
        return np.arange(self.n) * self.dx

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` node coordinates, each of shape ``(n, n)``."""
        return tuple(np.meshgrid(self.coords, self.coords, indexing="xy"))

    # -- wavenumbers ----------------------------------------------------
    @cached_property
    def mode_x(self) -> np.ndarray:
        """Integer x mode numbers, shape ``(1, n//2+1)``."""
        return np.arange(self.n // 2 + 1)[None, :]

    @cached_property
    def mode_y(self) -> np.ndarray:
        """Integer y mode numbers, shape ``(n, 1)``."""
        return sfft.fftfreq(self.n, 1.0 / self.n).astype(int)[:, None]

    @cached_property
    def kx(self) -> np.ndarray:
        return 2 * np.pi / self.L * self.mode_x

    @cached_property
    def ky(self) -> np.ndarray:
        return 2 * np.pi / self.L * self.mode_y

    @cached_property
    def kx_odd(self) -> np.ndarray:
        """x wavenumbers for odd-order derivatives (Nyquist zeroed)."""
        k = self.kx.copy()
        k[..., -1] = 0.0
        return k

    @cached_property
    def ky_odd(self) -> np.ndarray:
        k = self.ky.copy()
        k[self.n // 2] = 0.0
        return k

    @cached_property
    def k2(self) -> np.ndarray:
        """``|k|^2`` with full wavenumbers, shape ``(n, n//2+1)``."""
        return self.kx**2 + self.ky**2

    @cached_property
    def cutoff(self) -> int:
        return int(np.floor(self.dealias_fraction * self.n / 2))

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean mask of retained modes."""
        c = self.cutoff
        return (np.abs(self.mode_x) <= c) & (np.abs(self.mode_y) <= c)

    @cached_property
    def column_weights(self) -> np.ndarray:
        """Half-spectrum multiplicities: 1 for kx = 0 and Nyquist, else 2."""
        w = np.full((1, self.n // 2 + 1), 2.0)
        w[0, 0] = 1.0
        w[0, -1] = 1.0
        return w

    def multiplier(self, alpha: tuple[int, int]) -> np.ndarray:
        """Fourier symbol of ``d^a1/dx^a1 d^a2/dy^a2``."""
        ax, ay = alpha
        if ax < 0 or ay < 0:
            raise ValueError("derivative orders must be non-negative")
        mx = (1j * (self.kx_odd if ax % 2 else self.kx)) ** ax
        my = (1j * (self.ky_odd if ay % 2 else self.ky)) ** ay
        return mx * my

    def sobolev_weight(self, s: int) -> np.ndarray:
        """``sum_{|a|<=s} |symbol_a|^2`` on the half spectrum."""
        return self._sobolev_weight(int(s))

    def _sobolev_weight(self, s: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_sobolev_cache", {})
        if s not in cache:
            if s < 0:
                raise ValueError("Sobolev index must be non-negative")
            w = np.zeros(self.spectral_shape)
            for ax in range(s + 1):
                for ay in range(s + 1 - ax):
                    w = w + np.abs(self.multiplier((ax, ay))) ** 2
            cache[s] = w
        return cache[s]


def _check_physical(f: np.ndarray, grid: Grid) -> None:
    if f.ndim < 2 or f.shape[-2:] != grid.shape:
        raise DimensionError(f"expected trailing shape {grid.shape}, got {np.shape(f)}")


def _check_spectral(fh: np.ndarray, grid: Grid) -> None:
    if fh.ndim < 2 or fh.shape[-2:] != grid.spectral_shape:
        raise DimensionError(
            f"expected trailing spectral shape {grid.spectral_shape}, got {np.shape(fh)}"
        )


def to_spectral(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Forward transform of physical samples to Fourier amplitudes."""
    f = np.asarray(f, dtype=float)
    _check_physical(f, grid)
    return sfft.rfft2(f, norm="forward")


def to_physical(fh: np.ndarray, grid: Grid) -> np.ndarray:
    """Inverse of :func:`to_spectral`."""
    _check_spectral(fh, grid)
    return sfft.irfft2(fh, s=grid.shape, norm="forward")


def spectral_derivative(fh: np.ndarray, alpha: tuple[int, int], grid: Grid) -> np.ndarray:
    """Apply ``d^alpha`` to spectral coefficients.

    Odd-order factors annihilate the Nyquist mode so that a first derivative
    of a real field stays real and ``div grad`` differs from the Laplacian
    only on the Nyquist line.
    """
    _check_spectral(fh, grid)
    return fh * grid.multiplier(alpha)


def gradient(fh: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral gradient; adds an axis of length 2 before the grid axes."""
    _check_spectral(fh, grid)
    return np.stack([1j * grid.kx_odd * fh, 1j * grid.ky_odd * fh], axis=-3)


def divergence(uh: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral divergence of a vector field ``(..., 2, n, n//2+1)``."""
    _check_spectral(uh, grid)
    return 1j * grid.kx_odd * uh[..., 0, :, :] + 1j * grid.ky_odd * uh[..., 1, :, :]


def curl(uh: np.ndarray, grid: Grid) -> np.ndarray:
    """Scalar curl ``dx u_y - dy u_x``."""
    _check_spectral(uh, grid)
    return 1j * grid.kx_odd * uh[..., 1, :, :] - 1j * grid.ky_odd * uh[..., 0, :, :]


def laplacian(fh: np.ndarray, grid: Grid) -> np.ndarray:
    _check_spectral(fh, grid)
    return -grid.k2 * fh


def leray_helmholtz(uh: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Split a vector field into solenoidal part and gradient potential.

    Returns ``(u_sol, q)`` with ``u = u_sol + grad q``, ``div u_sol = 0``
    and ``q`` of zero mean.  The constant mode belongs to ``u_sol``.
    """
    _check_spectral(uh, grid)
    if uh.shape[-3] != 2:
        raise DimensionError("vector field needs 2 components")
    kx, ky = grid.kx_odd, grid.ky_odd
    kk = kx**2 + ky**2
    inv = np.divide(1.0, kk, out=np.zeros_like(kk), where=kk > 0)
    kdotu = kx * uh[..., 0, :, :] + ky * uh[..., 1, :, :]
    sol = np.stack([uh[..., 0, :, :] - kx * kdotu * inv, uh[..., 1, :, :] - ky * kdotu * inv], axis=-3)
    q = -1j * kdotu * inv
    return sol, q


def leray(uh: np.ndarray, grid: Grid) -> np.ndarray:
    """Solenoidal part of a vector field."""
    return leray_helmholtz(uh, grid)[0]


def remove_space_mean(fh: np.ndarray) -> np.ndarray:
    """Copy of ``fh`` with the zero mode cleared."""
    out = np.array(fh, copy=True)
    out[..., 0, 0] = 0.0
    return out


def dealias(fh: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero all modes outside the retained band."""
    _check_spectral(fh, grid)
    return fh * grid.mask


def squared_norm(fh: np.ndarray, grid: Grid, s: int = 0, axes: int = 2) -> np.ndarray:
    """Squared ``H^s`` norm summed over the trailing ``axes`` dimensions.

    With ``axes=2`` each scalar field is measured separately; ``axes=3``
    also sums over a component axis.
    """
    _check_spectral(fh, grid)
    w = grid.sobolev_weight(s) * grid.column_weights * grid.area
    dens = w * (fh.real**2 + fh.imag**2)
    return dens.sum(axis=tuple(range(-axes, 0)))


def sobolev_norm(fh: np.ndarray, s: int, grid: Grid) -> np.ndarray:
    """``H^s`` norm of a stack of scalar fields.

    The trailing three axes ``(components, n, n//2+1)`` are summed, so a
    whole state vector yields one number per batch entry:
    ``||f||_s^2 = sum_c sum_{|a|<=s} ||d^a f_c||_{L2}^2``.
    """
    if fh.ndim < 3:
        return np.sqrt(squared_norm(fh, grid, s, axes=2))
    return np.sqrt(squared_norm(fh, grid, s, axes=3))


def invert_laplacian(fh: np.ndarray, grid: Grid, rtol: float = 1e-10) -> np.ndarray:
    """Zero-mean solution ``g`` of ``Lap g = f``.

    Raises
    ------
    CompatibilityError
        If the mean of ``f`` exceeds ``rtol`` times its root-mean-square.
    """
    _check_spectral(fh, grid)
    rms = np.sqrt(squared_norm(fh, grid, 0) / grid.area)
    mean = np.abs(fh[..., 0, 0])
    if np.any(mean > rtol * np.maximum(rms, np.finfo(float).tiny)):
        raise CompatibilityError("Poisson data must have zero mean")
    k2 = grid.k2
    inv = np.divide(-1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    return fh * inv


def inner_product(a: np.ndarray, b: np.ndarray, grid: Grid, axes: int = 3) -> np.ndarray:
    """Midpoint-rule ``L2`` inner product of physical arrays.

    Exact for band-limited fields whose product is resolved on the grid.
    """
    _check_physical(a, grid)
    return (a * b).sum(axis=tuple(range(-axes, 0))) * grid.dx**2


def evaluate_at_points(fh: np.ndarray, points: np.ndarray, grid: Grid) -> np.ndarray:
    """Evaluate the trigonometric interpolant at arbitrary points.

    Parameters
    ----------
    fh : ndarray, shape (..., n, n//2+1)
        Spectral coefficients; only retained modes contribute, so the result
        is exact for band-limited fields.
    points : ndarray, shape (P, 2)
        ``(x, y)`` coordinates, not necessarily inside the box.

    Returns
    -------
    ndarray, shape (..., P)
    """
    _check_spectral(fh, grid)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError("points must have shape (P, 2)")
    c = grid.cutoff
    rows = np.concatenate([np.arange(c + 1), np.arange(grid.n - c, grid.n)])
    ky = grid.ky[rows, 0]
    kx = grid.kx[0, : c + 1]
    coef = fh[..., rows, : c + 1] * grid.column_weights[0, : c + 1]
    ey = np.exp(1j * np.outer(pts[:, 1], ky))  # (P, nky)
    ex = np.exp(1j * np.outer(pts[:, 0], kx))  # (P, nkx)
    tmp = np.einsum("pj,...jk->...pk", ey, coef)
    return np.einsum("...pk,pk->...p", tmp, ex).real


def evaluate_batched(fh: np.ndarray, points: np.ndarray, grid: Grid) -> np.ndarray:
    """Evaluate member ``m`` of ``fh (N, ..., n, n//2+1)`` at ``points[m] (N, P, 2)``."""
    _check_spectral(fh, grid)
    pts = np.asarray(points, dtype=float)
    c = grid.cutoff
    rows = np.concatenate([np.arange(c + 1), np.arange(grid.n - c, grid.n)])
    ky = grid.ky[rows, 0]
    kx = grid.kx[0, : c + 1]
    coef = fh[..., rows, : c + 1] * grid.column_weights[0, : c + 1]
    ey = np.exp(1j * pts[..., 1:2] * ky)  # (N, P, nky)
    ex = np.exp(1j * pts[..., 0:1] * kx)  # (N, P, nkx)
    extra = coef.ndim - 3
    ey_b = ey.reshape(ey.shape[:1] + (1,) * extra + ey.shape[1:])
    ex_b = ex.reshape(ex.shape[:1] + (1,) * extra + ex.shape[1:])
    tmp = ey_b @ coef
    return (tmp * ex_b).sum(axis=-1).real
