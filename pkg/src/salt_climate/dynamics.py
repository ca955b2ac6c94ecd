"""Time integration of the coupled model in its deterministic, SALT and
LA-SALT forms, and of the compressible rotating atmosphere.

All schemes are written for a list of arrays ``ys`` and an increment map
``K(ys)`` that already contains ``dt`` and the Brownian increments of the
current step, frozen over the stages:

* ``rk3``: strong-stability-preserving Runge-Kutta of order three,
* ``heun``: the two-stage predictor-corrector (Stratonovich),
* ``euler_maruyama``: one stage; the caller adds the Ito correction.

With frozen increments ``rk3`` and ``heun`` integrate the Stratonovich
interpretation, and without noise ``rk3`` is the classical SSP-RK3 method.
Lagrangian markers are advanced inside the same stages as the fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model_ops import (
    ATMOS,
    OCEAN,
    THETA_O,
    U_A,
    U_O,
    NumericalBlowupError,
    PhysParams,
    StateVector,
    TruncationConfig,
    atmos_rhs_hat,
    cutoff_g,
    mean_solenoidal,
    ocean_rhs_hat,
    perp,
    rhs_hat,
    state_norm,
)
from .noise import BrownianDriver, NoiseBasis, lie_pair_phys
from .spectral import Grid, dealias, evaluate_at_points, evaluate_batched, sobolev_norm, to_physical, to_spectral

SCHEMES = ("rk3", "heun", "euler_maruyama")
MODES = ("deterministic", "salt", "lasalt", "sam")


class PositivityError(ValueError):
    """Density or potential temperature became non-positive."""


@dataclass(frozen=True)
class StepperConfig:
    """Time-stepping controls.

    Parameters
    ----------
    dt : float
        Step size.
    scheme : {"rk3", "heun", "euler_maruyama"}
    trunc : TruncationConfig
    mode : {"deterministic", "salt", "lasalt", "sam"}
    abort_on_blowup : bool
        Raise instead of freezing an ensemble member whose state turns
        non-finite.
    chunk : int
        Members processed together; bounds memory for large ensembles.
    """

    dt: float
    scheme: str = "rk3"
    trunc: TruncationConfig = field(default_factory=TruncationConfig)
    mode: str = "deterministic"
    abort_on_blowup: bool = False
    chunk: int = 16

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")


def advance(ys: list, incr, scheme: str) -> list:
    """One step of ``scheme`` for the increment map ``incr``."""
    if scheme == "rk3":
        k = incr(ys)
        y1 = [a + b for a, b in zip(ys, k)]
        k = incr(y1)
        y2 = [0.75 * a + 0.25 * (b + c) for a, b, c in zip(ys, y1, k)]
        k = incr(y2)
        return [a / 3.0 + (2.0 / 3.0) * (b + c) for a, b, c in zip(ys, y2, k)]
    if scheme == "heun":
        k = incr(ys)
        y1 = [a + b for a, b in zip(ys, k)]
        k = incr(y1)
        return [0.5 * a + 0.5 * (b + c) for a, b, c in zip(ys, y1, k)]
    if scheme == "euler_maruyama":
        return [a + b for a, b in zip(ys, incr(ys))]
    raise ValueError(f"unknown scheme {scheme!r}")


def _chunks(idx: np.ndarray, size: int):
    for start in range(0, idx.size, size):
        yield idx[start:start + size]


# ---------------------------------------------------------------------------
# Lagrangian markers


def marker_velocity(vel_hat: np.ndarray, pts: np.ndarray, grid: Grid) -> np.ndarray:
    """Velocity at marker positions.

    ``vel_hat`` is ``(2, ...)`` with points of any leading shape, or
    ``(N, 2, ...)`` with ``pts (N, K, 2)``; the result has the shape of
    ``pts``.
    """
    if pts.ndim == 2:
        return np.moveaxis(evaluate_at_points(vel_hat, pts, grid), 0, -1)
    if vel_hat.ndim == 3:
        flat = np.moveaxis(evaluate_at_points(vel_hat, pts.reshape(-1, 2), grid), 0, -1)
        return flat.reshape(pts.shape)
    return np.moveaxis(evaluate_batched(vel_hat, pts, grid), 1, -1)


def marker_noise(xi_hat: np.ndarray, pts: np.ndarray, dW: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_i xi_i(X) dW_i`` at marker positions; ``dW`` is ``(M,)`` or ``(N, M)``."""
    flat = pts.reshape(-1, 2)
    vals = evaluate_at_points(xi_hat, flat, grid)  # (M, 2, P)
    if pts.ndim == 2:
        return np.einsum("m,mcp->pc", dW, vals)
    vals = vals.reshape(vals.shape[:2] + pts.shape[:2])
    return np.einsum("nm,mcnk->nkc", dW, vals)


# ---------------------------------------------------------------------------
# deterministic model


def _deterministic_incr(params: PhysParams, cfg: StepperConfig, marker_keys):
    g = params.grid
    dt = cfg.dt

    def incr(ys):
        data = ys[0]
        hat = to_spectral(data, g)
        out = [to_physical(rhs_hat(data, params, cfg.trunc, hat=hat), g) * dt]
        for key, pts in zip(marker_keys, ys[1:]):
            sl = U_O if key == "ocean" else U_A
            out.append(marker_velocity(hat[..., sl, :, :], pts, g) * dt)
        return out

    return incr


def step_deterministic(psi: StateVector, params: PhysParams, cfg: StepperConfig,
                       markers: dict | None = None, t: float | None = None) -> StateVector:
    """Advance the truncated deterministic model by one step.

    Parameters
    ----------
    markers : dict, optional
        Marker arrays keyed ``"atmosphere"`` or ``"ocean"``, advected with
        the corresponding velocity inside the same stages.  Entries are
        replaced by the advanced positions.
    t : float, optional
        Current time, reported if the step blows up.

    Raises
    ------
    NumericalBlowupError
        If the new state is not finite.
    """
    markers = {} if markers is None else markers
    keys = list(markers)
    if not np.all(np.isfinite(psi.data)):
        raise NumericalBlowupError("non-finite state", t)
    ys = advance([psi.data] + [markers[k] for k in keys], _deterministic_incr(params, cfg, keys), cfg.scheme)
    if not np.all(np.isfinite(ys[0])):
        raise NumericalBlowupError("state became non-finite", t)
    for k, v in zip(keys, ys[1:]):
        markers[k] = v
    return StateVector(psi.grid, ys[0])


def integrate_deterministic(psi: StateVector, params: PhysParams, cfg: StepperConfig, n_steps: int,
                            t0: float = 0.0, markers: dict | None = None, callback=None) -> StateVector:
    """Repeated :func:`step_deterministic`; ``callback(step, t, psi)`` after each step."""
    t = t0
    for k in range(n_steps):
        psi = step_deterministic(psi, params, cfg, markers, t)
        t = t0 + (k + 1) * cfg.dt
        if callback is not None:
            callback(k + 1, t, psi)
    return psi


# ---------------------------------------------------------------------------
# stopping


@dataclass(frozen=True)
class StopSignal:
    """Emitted when the state norm reaches the truncation radius."""

    norm: float
    R_cut: float


def detect_stop(psi: StateVector, cfg: TruncationConfig) -> StopSignal | None:
    """Stopping signal when ``||psi||_{H^s} >= R_cut`` (closed threshold)."""
    norm = float(np.max(state_norm(psi.data, psi.grid, cfg.s)))
    if norm >= cfg.R_cut:
        return StopSignal(norm, cfg.R_cut)
    return None


def stop_mask(data: np.ndarray, grid: Grid, cfg: TruncationConfig) -> np.ndarray:
    """Per-member version of :func:`detect_stop`."""
    if not np.isfinite(cfg.R_cut):
        return np.zeros(data.shape[:-3], dtype=bool)
    return state_norm(data, grid, cfg.s) >= cfg.R_cut


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Ensemble:
    """Interacting particles sharing a clock.

    Attributes
    ----------
    members : StateVector
        Batched state with data ``(N, 6, n, n)``.
    driver : BrownianDriver
    t : float
    step : int
        Number of completed steps; selects the Brownian increments.
    frozen_at : ndarray
        Stopping time per member, NaN while active.
    failed : ndarray
        Members frozen because their state became non-finite.
    member_ids : ndarray
        Stream identifiers passed to the driver.
    markers : dict
        Marker arrays ``(N, K, 2)`` keyed ``"atmosphere"`` or ``"ocean"``.
    """

    members: StateVector
    driver: BrownianDriver
    t: float = 0.0
    step: int = 0
    frozen_at: np.ndarray | None = None
    failed: np.ndarray | None = None
    member_ids: np.ndarray | None = None
    markers: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.members.batch_shape) != 1:
            raise ValueError("ensemble members need exactly one batch axis")
        n = self.N
        if n < 1:
            raise ValueError("ensemble needs at least one member")
        if self.frozen_at is None:
            self.frozen_at = np.full(n, np.nan)
        if self.failed is None:
            self.failed = np.zeros(n, dtype=bool)
        if self.member_ids is None:
            self.member_ids = np.arange(n)

    @classmethod
    def replicate(cls, psi: StateVector, N: int, driver: BrownianDriver,
                  markers: dict | None = None) -> "Ensemble":
        """``N`` identical copies of ``psi`` (and of each marker set)."""
        data = np.broadcast_to(psi.data, (N,) + psi.data.shape).copy()
        mk = {k: np.broadcast_to(v, (N,) + v.shape).copy() for k, v in (markers or {}).items()}
        return cls(StateVector(psi.grid, data), driver, markers=mk)

    @property
    def N(self) -> int:
        return self.members.data.shape[0]

    @property
    def grid(self) -> Grid:
        return self.members.grid

    @property
    def frozen(self) -> np.ndarray:
        return ~np.isnan(self.frozen_at)

    def empirical_mean(self) -> StateVector:
        return StateVector(self.grid, self.members.data.mean(axis=0))

    def copy(self) -> "Ensemble":
        return replace(self, members=self.members.copy(), frozen_at=self.frozen_at.copy(),
                       failed=self.failed.copy(), member_ids=self.member_ids.copy(),
                       markers={k: v.copy() for k, v in self.markers.items()})


def _finish_ensemble(ens: Ensemble, old: np.ndarray, new: np.ndarray, markers_new: dict,
                     cfg: StepperConfig, check_stop: bool) -> Ensemble:
    frozen = ens.frozen
    t_new = ens.t + cfg.dt
    bad = ~np.isfinite(new).reshape(ens.N, -1).all(axis=1) & ~frozen
    if np.any(bad) and cfg.abort_on_blowup:
        raise NumericalBlowupError(f"members {np.flatnonzero(bad).tolist()} became non-finite", ens.t)
    new[frozen | bad] = old[frozen | bad]
    frozen_at = ens.frozen_at.copy()
    failed = ens.failed.copy()
    frozen_at[bad] = ens.t
    failed |= bad
    for k, v in markers_new.items():
        if v.ndim == 3:
            v[frozen | bad] = ens.markers[k][frozen | bad]
    if check_stop:
        hit = stop_mask(new, ens.grid, cfg.trunc) & ~frozen & ~bad
        frozen_at[hit] = t_new
    return Ensemble(StateVector(ens.grid, new), ens.driver, t_new, ens.step + 1, frozen_at, failed,
                    ens.member_ids, markers_new)


def _salt_incr(params, basis, cfg, active, dW, marker_keys):
    g = params.grid
    dt = cfg.dt
    s = cfg.trunc.s
    M = basis.M
    ops = basis.operators(params) if M else None
    ito = cfg.scheme == "euler_maruyama"
    xi_hat = to_spectral(ops.xi, g) if M else None

    def atmos_part(atm, atm_hat, theta_o_hat, idx):
        """Unscaled atmospheric increment rate, noise expressed per unit time."""
        if not M:
            return atmos_rhs_hat(atm, atm_hat, theta_o_hat, params, 1.0)
        grads = (to_physical(1j * g.kx_odd * atm_hat, g), to_physical(1j * g.ky_odd * atm_hat, g))
        xi, dx, dy, b = ops.combine(dW[idx])
        # noise products share the transform of the drift products
        extra = lie_pair_phys(atm, grads[0], grads[1], xi, dx, dy) / dt
        th = atmos_rhs_hat(atm, atm_hat, theta_o_hat, params, 1.0, grads, extra)
        th[:, 0:2] -= b / dt
        if ito:
            th += ops.ito_correction_hat(atm, atm_hat, grads)
        return th

    def incr(ys):
        data = ys[0]
        # failed members carry non-finite states and are left out of the mean
        ok = np.isfinite(data[:, U_A]).reshape(data.shape[0], -1).all(axis=1)
        ubar = mean_solenoidal(to_spectral(data[ok, U_A].mean(axis=0), g), g) if ok.any() \
            else np.full((2,) + g.spectral_shape, np.nan, dtype=complex)
        out = np.zeros_like(data)
        mk_out = [np.zeros_like(p) for p in ys[1:]]
        if active.size == 0:
            return [out] + mk_out
        # members driven by the same mean share one ocean until frozen
        oc = data[active[0], OCEAN]
        shared = bool(np.all(data[active, OCEAN] == oc))
        if shared:
            oc_hat = to_spectral(oc, g)
            oc_norm2 = sobolev_norm(oc_hat, s, g) ** 2
            oc_incr = to_physical(ocean_rhs_hat(oc, oc_hat, ubar, params, 1.0), g) * dt
        for idx in _chunks(active, cfg.chunk):
            d = data[idx]
            if shared:
                atm = d[:, ATMOS]
                atm_hat = to_spectral(atm, g)
                norm = np.sqrt(sobolev_norm(atm_hat, s, g) ** 2 + oc_norm2)
                gr = np.asarray(cutoff_g(norm, cfg.trunc)).reshape(-1, 1, 1, 1)
                out[idx, ATMOS] = to_physical(atmos_part(atm, atm_hat, oc_hat[2], idx) * gr, g) * dt
                out[idx, OCEAN] = gr * oc_incr
                vel_hat = {"atmosphere": atm_hat[:, 0:2], "ocean": to_spectral(d[:, U_O], g)}
            else:
                hat = to_spectral(d, g)
                gr = np.asarray(cutoff_g(state_norm(d, g, s, hat), cfg.trunc)).reshape(-1, 1, 1, 1)
                th = np.empty_like(hat)
                th[:, ATMOS] = atmos_part(d[:, ATMOS], hat[:, ATMOS], hat[:, THETA_O], idx)
                th[:, OCEAN] = ocean_rhs_hat(d[:, OCEAN], hat[:, OCEAN], ubar, params, 1.0)
                out[idx] = to_physical(th * gr, g) * dt
                vel_hat = {"atmosphere": hat[:, U_A], "ocean": hat[:, U_O]}
            for j, (key, pts) in enumerate(zip(marker_keys, ys[1:])):
                v = marker_velocity(vel_hat[key], pts[idx], g) * dt
                if M and key != "ocean":
                    v += marker_noise(xi_hat, pts[idx], dW[idx], g)
                mk_out[j][idx] = v
        return [out] + mk_out

    return incr


def step_salt_ensemble(ens: Ensemble, params: PhysParams, basis: NoiseBasis, cfg: StepperConfig,
                       dW: np.ndarray | None = None) -> Ensemble:
    """Advance every active SALT member by one step.

    The drift of each member is ``g_R`` times the full deterministic
    tendency with the ocean coupled to the ensemble-mean atmospheric
    velocity; the noise is ``-g_R sum_i E_i(psi_a) dW_i``.  Frozen members
    are left untouched but still enter the ensemble mean.

    Parameters
    ----------
    dW : ndarray, shape (N, M), optional
        Increments for this step; drawn from ``ens.driver`` when omitted.
    """
    M = basis.M
    if dW is None:
        dW = ens.driver.increments(ens.member_ids, ens.step, M)
    dW = np.asarray(dW, dtype=float).reshape(ens.N, M)
    active = np.flatnonzero(~ens.frozen)
    keys = list(ens.markers)
    old = ens.members.data
    ys = advance([old] + [ens.markers[k] for k in keys], _salt_incr(params, basis, cfg, active, dW, keys),
                 cfg.scheme)
    return _finish_ensemble(ens, old, ys[0], dict(zip(keys, ys[1:])), cfg, check_stop=True)


# ---------------------------------------------------------------------------
# LA-SALT


def fluctuation(member_psi_a, expectation_psi_a) -> np.ndarray:
    """Difference between member atmospheric pairs and the expectation."""
    return np.asarray(member_psi_a, dtype=float) - np.asarray(expectation_psi_a, dtype=float)


def _lasalt_incr(params, basis, cfg, active, dW, marker_keys):
    g = params.grid
    dt = cfg.dt
    M = basis.M
    ops = basis.operators(params) if M else None
    ito = cfg.scheme == "euler_maruyama"
    xi_hat = to_spectral(ops.xi, g) if M else None
    nu = params.diffusivities()[ATMOS]

    def incr(ys):
        E = ys[0]
        mem = ys[1]
        hatE = to_spectral(E, g)
        kE = to_physical(rhs_hat(E, params, cfg.trunc, hat=hatE), g) * dt
        if M:
            kE[ATMOS] -= to_physical(ops.double_lie_hat(E[ATMOS]), g) * dt
        # member drift: linear transport by the expected velocity
        ue = E[U_A]
        ue_hat = hatE[U_A]
        due_x = to_physical(1j * g.kx_odd * ue_hat, g)
        due_y = to_physical(1j * g.ky_odd * ue_hat, g)
        common = np.zeros((3,) + g.spectral_shape, dtype=complex)
        ke = dealias(to_spectral(0.5 * (ue**2).sum(axis=0), g), g)
        common[0] = 1j * g.kx_odd * ke
        common[1] = 1j * g.ky_odd * ke
        common[0:2] -= dealias(to_spectral(params.coriolis.f * perp(ue), g), g) / params.Ro_a
        common[2] = params.gamma * hatE[THETA_O]
        common_phys = to_physical(common, g) * dt
        out = np.zeros_like(mem)
        mk_out = [np.zeros_like(p) for p in ys[2:]]
        for idx in _chunks(active, cfg.chunk):
            d = mem[idx]
            hat = to_spectral(d, g)
            adv = ue * dt
            ax, ay = due_x * dt, due_y * dt
            if M:
                xi, dx, dy, b = ops.combine(dW[idx])
                adv, ax, ay = adv + xi, ax + dx, ay + dy
            gx = to_physical(1j * g.kx_odd * hat, g)
            gy = to_physical(1j * g.ky_odd * hat, g)
            th = -dealias(to_spectral(lie_pair_phys(d, gx, gy, adv, ax, ay), g), g)
            th[:, 0] -= dt * 1j * g.kx_odd * hat[:, 2] / params.Ro_a
            th[:, 1] -= dt * 1j * g.ky_odd * hat[:, 2] / params.Ro_a
            th[:, 2] -= dt * params.gamma * hat[:, 2]
            th -= dt * g.k2 * hat * nu
            if M:
                th[:, 0:2] -= b
                if ito:
                    th += ops.ito_correction_hat(d, hat) * dt
            out[idx] = to_physical(th, g) + common_phys
            for j, (key, pts) in enumerate(zip(marker_keys, ys[2:])):
                if key == "ocean":
                    continue
                v = marker_velocity(ue_hat, pts[idx], g) * dt
                if M:
                    v += marker_noise(xi_hat, pts[idx], dW[idx], g)
                mk_out[j][idx] = v
        for j, (key, pts) in enumerate(zip(marker_keys, ys[2:])):
            if key == "ocean":
                mk_out[j] = marker_velocity(hatE[U_O], pts, g) * dt
        return [kE, out] + mk_out

    return incr


def step_lasalt(expectation: StateVector, ens: Ensemble, params: PhysParams, basis: NoiseBasis,
                cfg: StepperConfig, dW: np.ndarray | None = None) -> tuple[StateVector, Ensemble]:
    """Advance the closed expectation system and the linear members together.

    The pair ``(E[u_a], E[theta_a], u_o, theta_o)`` follows the deterministic
    right-hand side plus the second-order noise term.  Each member's
    atmospheric pair obeys the linear equation transported by the expected
    velocity with transport noise; members never feed back into the
    expectation.  Member ocean slots mirror the shared ocean.  Atmospheric
    markers move with ``E[u_a] dt + sum_i xi_i o dW_i``.
    """
    M = basis.M
    if dW is None:
        dW = ens.driver.increments(ens.member_ids, ens.step, M)
    dW = np.asarray(dW, dtype=float).reshape(ens.N, M)
    active = np.flatnonzero(~ens.frozen)
    keys = [k for k in ens.markers]
    if "ocean" in keys and ens.markers["ocean"].ndim != 2:
        raise ValueError("the LA-SALT ocean is shared, so ocean markers have shape (K, 2)")
    if not np.all(np.isfinite(expectation.data)):
        raise NumericalBlowupError("non-finite expectation", ens.t)
    old = ens.members.data
    ys = advance([expectation.data, old[:, ATMOS]] + [ens.markers[k] for k in keys],
                 _lasalt_incr(params, basis, cfg, active, dW, keys), cfg.scheme)
    if not np.all(np.isfinite(ys[0])):
        raise NumericalBlowupError("expectation became non-finite", ens.t)
    new = np.empty_like(old)
    new[:, ATMOS] = ys[1]
    new[:, OCEAN] = ys[0][OCEAN]
    frozen = ens.frozen
    new_ens = _finish_ensemble(ens, old, new, dict(zip(keys, ys[2:])), cfg, check_stop=False)
    new_ens.members.data[frozen, OCEAN] = ys[0][OCEAN]
    return StateVector(expectation.grid, ys[0]), new_ens


# ---------------------------------------------------------------------------
# compressible rotating atmosphere


@dataclass(frozen=True)
class SamParams:
    """Thermodynamic and rotation constants of the compressible model.

    Pressure is ``p = kappa (alpha - 1) (D theta)^alpha`` so that the
    internal energy density is ``kappa (D theta)^alpha``.
    """

    kappa: float
    alpha: float
    Ro: float
    coriolis: "object"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if not self.Ro > 0:
            raise ValueError("Ro must be positive")

    @staticmethod
    def alpha_from_gas(gamma_gas: float) -> float:
        """``alpha = 2 - 1 / gamma_gas``."""
        return 2.0 - 1.0 / gamma_gas

    @property
    def grid(self) -> Grid:
        return self.coriolis.grid


@dataclass
class CompressibleState:
    """Velocity, areal density and potential temperature."""

    u: np.ndarray
    D: np.ndarray
    theta: np.ndarray
    params: SamParams

    def __post_init__(self):
        n = self.params.grid.shape
        self.u = np.asarray(self.u, dtype=float)
        self.D = np.asarray(self.D, dtype=float) * np.ones(n)
        self.theta = np.asarray(self.theta, dtype=float) * np.ones(n)
        if self.u.shape != (2, *n):
            raise ValueError("velocity must have shape (2, n, n)")

    @property
    def grid(self) -> Grid:
        return self.params.grid

    def pack(self) -> np.ndarray:
        """``(u_x, u_y, D, D theta)``."""
        return np.concatenate([self.u, self.D[None], (self.D * self.theta)[None]])

    @classmethod
    def unpack(cls, y: np.ndarray, params: SamParams) -> "CompressibleState":
        return cls(y[0:2].copy(), y[2].copy(), y[3] / y[2], params)


def _sam_incr(p: SamParams, dt: float, basis: NoiseBasis | None, dW, marker_keys):
    g = p.grid
    f = p.coriolis.f
    ka = p.kappa * p.alpha
    M = 0 if basis is None else basis.M
    xi = basis.fields if M else None
    if M:
        xi_w = np.tensordot(dW, xi, axes=([0], [0]))
        xi_hat = to_spectral(xi, g)
        b_w = np.tensordot(dW, to_physical(_sam_affine_hat(xi, p), g), axes=([0], [0]))

    def div_hat(flux):
        fh = dealias(to_spectral(flux, g), g)
        return 1j * g.kx_odd * fh[0] + 1j * g.ky_odd * fh[1]

    def incr(ys):
        y = ys[0]
        u, D, Th = y[0:2], y[2], y[3]
        if np.any(D <= 0) or np.any(Th <= 0):
            raise PositivityError("density or potential temperature lost positivity")
        th = Th / D
        hat = to_spectral(y, g)
        om = to_physical(1j * g.kx_odd * hat[1] - 1j * g.ky_odd * hat[0], g)
        bern = 0.5 * (u**2).sum(axis=0) + ka * Th**p.alpha / D
        th_hat = to_spectral(th, g)
        grad_th = to_physical(np.stack([1j * g.kx_odd * th_hat, 1j * g.ky_odd * th_hat]), g)
        mom = -(om + f / p.Ro) * perp(u) + ka * D ** (p.alpha - 1) * th ** (p.alpha - 1) * grad_th
        mh = dealias(to_spectral(mom, g), g)
        bh = dealias(to_spectral(bern, g), g)
        mh[0] -= 1j * g.kx_odd * bh
        mh[1] -= 1j * g.ky_odd * bh
        out = np.empty_like(y)
        out[0:2] = to_physical(mh, g) * dt
        out[2] = -to_physical(div_hat(D * u), g) * dt
        out[3] = -to_physical(div_hat(Th * u), g) * dt
        if M:
            # -L_xi (u + R/Ro) dW = -(grad(xi.u) + curl(u) xi^perp + affine) dW
            a = dealias(to_spectral((xi_w * u).sum(axis=0), g), g)
            lie = dealias(to_spectral(om * perp(xi_w), g), g)
            lie[0] += 1j * g.kx_odd * a
            lie[1] += 1j * g.ky_odd * a
            out[0:2] -= to_physical(lie, g) + b_w
            out[2] -= to_physical(div_hat(D * xi_w), g)
            out[3] -= to_physical(div_hat(Th * xi_w), g)
        res = [out]
        for pts in ys[1:]:
            v = marker_velocity(hat[0:2], pts, g) * dt
            if M:
                v += marker_noise(xi_hat, pts, dW, g)
            res.append(v)
        return res

    return incr


def _sam_affine_hat(xi: np.ndarray, p: SamParams) -> np.ndarray:
    g = p.grid
    c = p.coriolis
    rx = dealias(to_spectral(c.R[0] * xi[:, 0] + c.R[1] * xi[:, 1], g), g)
    out = dealias(to_spectral(c.f * perp(xi), g), g)
    out[:, 0] += 1j * g.kx_odd * rx
    out[:, 1] += 1j * g.ky_odd * rx
    return out / p.Ro


def step_sam_compressible(state: CompressibleState, basis: NoiseBasis | None, cfg: StepperConfig,
                          dW: np.ndarray | None = None, markers: dict | None = None) -> CompressibleState:
    """One step of the compressible rotating atmosphere.

    Momentum, mass and mass-weighted potential temperature obey

        du + (curl u + f/Ro) u^perp dt + grad(|u|^2/2) dt = -(1/D) grad p dt
        dD + div(D u) dt = 0,    d(D theta) + div(D theta u) dt = 0

    with transport noise ``-L_xi (u + R/Ro) o dW`` on the momentum and
    ``-div(. xi) o dW`` on both densities.  The continuity equations are in
    flux form, so the totals of ``D`` and ``D theta`` change only by roundoff.

    Raises
    ------
    PositivityError
        If ``D`` or ``theta`` is not positive before or after the step.
    """
    M = 0 if basis is None else basis.M
    if M and dW is None:
        raise ValueError("increments are required when the basis is not empty")
    dW = np.zeros(0) if dW is None else np.asarray(dW, dtype=float).reshape(M)
    markers = {} if markers is None else markers
    keys = list(markers)
    y = state.pack()
    ys = advance([y] + [markers[k] for k in keys], _sam_incr(state.params, cfg.dt, basis, dW, keys), cfg.scheme)
    ynew = ys[0]
    if not np.all(np.isfinite(ynew)):
        raise NumericalBlowupError("compressible state became non-finite")
    if np.any(ynew[2] <= 0) or np.any(ynew[3] <= 0):
        raise PositivityError("density or potential temperature lost positivity")
    for k, v in zip(keys, ys[1:]):
        markers[k] = v
    return CompressibleState.unpack(ynew, state.params)
