"""Property-based acceptance suite at desk scale.

Each check returns a :class:`CriterionResult`; :func:`run_suite` prints one
``PASS``/``FAIL`` line per criterion.  Unless a check says otherwise the
setting is ``L = 2 pi``, a 64 x 64 grid, ``s = 2``, ``R_cut = inf`` and
``dt = 1e-3``.

Inviscid runs start from band-limited random data with modes ``|n| <= 2``
and root-mean-square amplitude 0.1.  The inviscid atmosphere has no
restoring pressure, so larger or broader initial data steepens into
fronts before ``T = 1`` and the conservation checks would then measure
resolution loss rather than the scheme.

``quick=True`` shrinks ensembles and horizons for a fast smoke pass; the
tolerances are unchanged.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .diagnostics import (
    MaterialLoop,
    casimir,
    circulation,
    energy_sam,
    ensemble_variance,
    potential_vorticity,
    resample_if_stretched,
    variance_rhs,
)
from .dynamics import (
    CompressibleState,
    Ensemble,
    SamParams,
    StepperConfig,
    step_deterministic,
    step_lasalt,
    step_salt_ensemble,
    step_sam_compressible,
)
from .model_ops import (
    ATMOS,
    THETA_A,
    CoriolisField,
    PhysParams,
    StateVector,
    TruncationConfig,
    project_state,
    random_state,
    state_norm,
)
from .noise import BrownianDriver, default_xi_basis
from .spectral import (
    Grid,
    dealias,
    evaluate_at_points,
    gradient,
    leray,
    leray_helmholtz,
    divergence,
    inner_product,
    spectral_derivative,
    squared_norm,
    to_physical,
    to_spectral,
)

INIT_AMPLITUDE = 0.1
INIT_KMAX = 2
DT = 1e-3


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} [{self.number:2d}] {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _grid(n: int = 64) -> Grid:
    return Grid(2 * math.pi, n)


def _params(grid: Grid, **kw) -> PhysParams:
    return PhysParams(CoriolisField.sinusoidal(grid, 1.0), **kw)


def _initial(grid: Grid, seed: int = 1) -> StateVector:
    return random_state(grid, np.random.default_rng(seed), INIT_KMAX, INIT_AMPLITUDE)


def _circle(grid: Grid, K: int = 256) -> np.ndarray:
    return MaterialLoop.circle(grid, (math.pi, math.pi), 1.0, K).points


def _rel(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.abs(np.asarray(b))))


# ---------------------------------------------------------------------------
# 1. spectral and projection identities


def check_spectral(quick: bool = False) -> CriterionResult:
    g = _grid()
    rng = np.random.default_rng(0)
    worst = {}

    f = rng.standard_normal(g.shape)
    worst["round trip"] = float(np.abs(to_physical(to_spectral(f, g), g) - f).max())

    # sixth-order central differences of a smooth field on a fine grid
    gf = _grid(512)
    xf, yf = gf.mesh
    h = np.sin(2 * xf) * np.cos(3 * yf) + np.cos(xf + yf)
    dh = spectral_derivative(to_spectral(h, gf), (1, 0), gf)
    dx = gf.dx
    fd = (np.roll(h, -3, 1) - 9 * np.roll(h, -2, 1) + 45 * np.roll(h, -1, 1)
          - 45 * np.roll(h, 1, 1) + 9 * np.roll(h, 2, 1) - np.roll(h, 3, 1)) / (60 * dx)
    worst["derivative"] = float(np.abs(to_physical(dh, gf) - fd).max())

    # band-limited: the Nyquist row carries no derivative information
    uh = dealias(to_spectral(rng.standard_normal((2,) + g.shape), g), g)
    P = leray(uh, g)
    sol, q = leray_helmholtz(uh, g)
    grad = gradient(q, g)
    worst["idempotence"] = float(np.abs(leray(P, g) - P).max())
    worst["divergence"] = float(np.abs(to_physical(divergence(P, g), g)).max())
    scale = float(np.sqrt(squared_norm(sol, g, axes=3) * squared_norm(grad, g, axes=3)))
    worst["orthogonality"] = float(abs(inner_product(to_physical(sol, g), to_physical(grad, g), g, axes=3))) / scale
    energy = float(np.mean(f**2)) * g.area
    worst["parseval"] = abs(float(squared_norm(to_spectral(f, g), g)) - energy) / energy

    tol = {"round trip": 1e-12, "derivative": 1e-8, "idempotence": 1e-11, "divergence": 1e-11,
           "orthogonality": 1e-11, "parseval": 1e-10}
    passed = all(worst[k] < tol[k] for k in tol)
    detail = ", ".join(f"{k} {worst[k]:.1e}" for k in tol)
    return CriterionResult(1, "spectral identities", passed, detail)


# ---------------------------------------------------------------------------
# 2-3. deterministic Kelvin


@lru_cache(maxsize=2)
def _kelvin_run(T: float) -> tuple[float, float]:
    g = _grid()
    p = _params(g)
    psi = _initial(g)
    mk = {"atmosphere": _circle(g), "ocean": _circle(g)}
    cor = p.coriolis
    c0 = (circulation(mk["atmosphere"], psi.u_a, cor, p.Ro_a, grid=g),
          circulation(mk["ocean"], psi.u_o, cor, p.Ro_o, grid=g))
    cfg = StepperConfig(DT)
    worst = [0.0, 0.0]
    for k in range(int(round(T / DT))):
        psi = step_deterministic(psi, p, cfg, mk)
        for key in mk:
            mk[key] = resample_if_stretched(mk[key], 4 * g.dx)
        if (k + 1) % 10 == 0:
            ca = circulation(mk["atmosphere"], psi.u_a, cor, p.Ro_a, grid=g)
            co = circulation(mk["ocean"], psi.u_o, cor, p.Ro_o, grid=g)
            worst = [max(worst[0], _rel(ca, c0[0])), max(worst[1], _rel(co, c0[1]))]
    return worst[0], worst[1]


def check_kelvin_atmosphere(quick: bool = False) -> CriterionResult:
    T = 0.25 if quick else 1.0
    drift = _kelvin_run(T)[0]
    return CriterionResult(2, "atmosphere Kelvin", drift <= 1e-3,
                           f"max relative circulation drift {drift:.2e} <= 1e-3 over T={T}")


def check_kelvin_ocean(quick: bool = False) -> CriterionResult:
    T = 0.25 if quick else 1.0
    drift = _kelvin_run(T)[1]
    return CriterionResult(3, "ocean Kelvin", drift <= 1e-3,
                           f"max relative circulation drift {drift:.2e} <= 1e-3 over T={T}")


# ---------------------------------------------------------------------------
# 4. pathwise SALT Kelvin


def check_kelvin_salt(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g)
    N, T = (4, 0.1) if quick else (8, 0.5)
    basis = default_xi_basis(g, 2, amplitude=0.05)
    ens = Ensemble.replicate(_initial(g), N, BrownianDriver(4, DT), {"atmosphere": _circle(g)})
    cor = p.coriolis
    c0 = circulation(ens.markers["atmosphere"], ens.members.data[:, 0:2], cor, p.Ro_a, grid=g)
    cfg = StepperConfig(DT, scheme="heun", mode="salt")
    worst = 0.0
    for k in range(int(round(T / DT))):
        ens = step_salt_ensemble(ens, p, basis, cfg)
        ens.markers["atmosphere"] = resample_if_stretched(ens.markers["atmosphere"], 4 * g.dx)
        if (k + 1) % 10 == 0:
            c = circulation(ens.markers["atmosphere"], ens.members.data[:, 0:2], cor, p.Ro_a, grid=g)
            worst = max(worst, _rel(c, c0))
    return CriterionResult(4, "SALT Kelvin", worst <= 5e-3,
                           f"max pathwise relative drift {worst:.2e} <= 5e-3, {N} paths, T={T}")


# ---------------------------------------------------------------------------
# 5. Stratonovich/Ito weak consistency


def _salt_theta(p, basis, psi, N, dt, T, scheme, seed):
    ens = Ensemble.replicate(psi, N, BrownianDriver(seed, dt))
    cfg = StepperConfig(dt, scheme=scheme, mode="salt")
    for _ in range(int(round(T / dt))):
        ens = step_salt_ensemble(ens, p, basis, cfg)
    return ens.members.data[:, THETA_A]


def check_ito_consistency(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g, gamma=-0.1, sigma=-0.1)
    basis = default_xi_basis(g, 2, amplitude=0.05)
    psi = _initial(g)
    N, T = (32, 0.05) if quick else (256, 0.25)
    gaps, ses = [], []
    for dt in (DT, DT / 2):
        h = _salt_theta(p, basis, psi, N, dt, T, "heun", 5)
        e = _salt_theta(p, basis, psi, N, dt, T, "euler_maruyama", 5)
        gaps.append(float(np.sqrt(np.mean((h.mean(0) - e.mean(0)) ** 2))))
        ses.append(float(np.sqrt(np.mean(h.var(0, ddof=1) / N))))
    ok_se = all(gp <= 3 * se for gp, se in zip(gaps, ses))
    ratio = gaps[1] / gaps[0]
    detail = (f"gap {gaps[0]:.2e} (3 SE {3 * ses[0]:.2e}) at dt, {gaps[1]:.2e} (3 SE {3 * ses[1]:.2e}) at dt/2, "
              f"ratio {ratio:.2f} <= 0.7, N={N}")
    return CriterionResult(5, "Stratonovich/Ito consistency", ok_se and ratio <= 0.7, detail)


# ---------------------------------------------------------------------------
# 6-7. LA-SALT closure and variance identity


def _l2(f, g: Grid) -> float:
    return float(np.sqrt(np.sum(f**2) * g.dx**2))


def check_lasalt_closure(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g, gamma=-0.1, sigma=-0.1)
    basis = default_xi_basis(g, 2, amplitude=0.05)
    psi = _initial(g)
    N, T = (64, 0.1) if quick else (256, 0.5)
    ens = Ensemble.replicate(psi, N, BrownianDriver(6, DT))
    E = psi
    cfg = StepperConfig(DT, mode="lasalt")
    bound = 5 / math.sqrt(N) * _l2(psi.atmos, g)
    worst = 0.0
    for k in range(int(round(T / DT))):
        E, ens = step_lasalt(E, ens, p, basis, cfg)
        if (k + 1) % 10 == 0:
            worst = max(worst, _l2(ens.members.data[:, ATMOS].mean(0) - E.atmos, g))
    return CriterionResult(6, "LA-SALT closure", worst <= bound,
                           f"sup L2 distance {worst:.3e} <= {bound:.3e}, N={N}, T={T}")


def check_variance_identity(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g, gamma=-0.1, sigma=-0.1)
    basis = default_xi_basis(g, 16, amplitude=0.05, decay=0.25)
    psi = _initial(g)
    N, T = (64, 0.05) if quick else (512, 0.25)
    ens = Ensemble.replicate(psi, N, BrownianDriver(7, DT))
    E = psi
    cfg = StepperConfig(DT, mode="lasalt")
    theta0 = ensemble_variance(ens, E)
    rhs = [variance_rhs(ens, E, p, basis)]
    for _ in range(int(round(T / DT))):
        E, ens = step_lasalt(E, ens, p, basis, cfg)
        rhs.append(variance_rhs(ens, E, p, basis))
    theta1 = ensemble_variance(ens, E)
    integral = float(np.trapezoid(rhs, dx=DT)) if hasattr(np, "trapezoid") else float(np.trapz(rhs, dx=DT))
    eps = 1e-12
    resid = abs(theta1 - theta0 - integral)
    bound = 0.05 * max(theta1, theta0 + eps)
    return CriterionResult(7, "variance identity", resid <= bound,
                           f"|dTheta - integral| {resid:.3e} <= {bound:.3e} "
                           f"(Theta(T) {theta1:.4e}, integral {integral:.4e}), N={N}, T={T}")


# ---------------------------------------------------------------------------
# 8. compressible conservation laws


def check_sam_conservation(quick: bool = False) -> CriterionResult:
    g = _grid()
    sp = SamParams(kappa=1.0, alpha=1.4, Ro=1.0, coriolis=CoriolisField.sinusoidal(g, 1.0))
    r = random_state(g, np.random.default_rng(3), INIT_KMAX, INIT_AMPLITUDE).data
    # uniform theta: the baroclinic torque vanishes and PV is materially conserved
    st = CompressibleState(r[0:2], 1.0 + r[2], np.ones(g.shape), sp)
    T = 0.25 if quick else 1.0
    mk = {"pv": _circle(g, 64)}
    q0 = evaluate_at_points(to_spectral(potential_vorticity(st), g), mk["pv"], g)
    e0, c0, m0 = energy_sam(st), casimir(st, np.square), float((st.D * st.theta).sum())
    cfg = StepperConfig(DT, mode="sam")
    for _ in range(int(round(T / DT))):
        st = step_sam_compressible(st, None, cfg, markers=mk)
    q1 = evaluate_at_points(to_spectral(potential_vorticity(st), g), mk["pv"], g)
    de = abs(energy_sam(st) / e0 - 1)
    dc = abs(casimir(st, np.square) / c0 - 1)
    dm = abs(float((st.D * st.theta).sum()) / m0 - 1)
    dq = float(np.abs(q1 - q0).max() / np.abs(q0).max())
    passed = de <= 1e-4 and dc <= 1e-4 and dm <= 1e-10 and dq <= 1e-3
    return CriterionResult(8, "compressible conservation", passed,
                           f"energy {de:.1e}, Casimir {dc:.1e}, mass-weighted theta {dm:.1e}, "
                           f"PV on markers {dq:.1e}, T={T}")


# ---------------------------------------------------------------------------
# 9. truncation consistency and frozen members


def check_truncation(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g)
    psi0 = _initial(g)
    s = 2
    n0 = float(state_norm(psi0.data, g, s))
    R1 = 2.0 * n0
    T = 0.1 if quick else 0.5
    runs = []
    for R in (R1, 10 * R1):
        cfg = StepperConfig(DT, trunc=TruncationConfig(R, 1.0, s))
        psi, peak = psi0, n0
        for _ in range(int(round(T / DT))):
            psi = step_deterministic(psi, p, cfg)
            peak = max(peak, float(state_norm(psi.data, g, s)))
        runs.append((psi.data, peak))
    diff = float(np.abs(runs[0][0] - runs[1][0]).max())
    below = runs[0][1] < R1

    # SALT members frozen by the cut-off keep bit-identical states
    basis = default_xi_basis(g, 2, amplitude=0.5)
    N = 8
    ens = Ensemble.replicate(psi0, N, BrownianDriver(9, DT))
    cfg = StepperConfig(DT, scheme="heun", mode="salt", trunc=TruncationConfig(1.02 * n0, 1.0, s))
    saved = {}
    identical = True
    for _ in range(200):
        ens = step_salt_ensemble(ens, p, basis, cfg)
        for m in np.flatnonzero(ens.frozen):
            snap = ens.members.data[m].tobytes()
            identical &= saved.setdefault(m, snap) == snap
    n_frozen = int(ens.frozen.sum())
    passed = diff <= 1e-12 and below and identical and n_frozen > 0
    return CriterionResult(9, "truncation consistency", passed,
                           f"R1 vs 10 R1 max diff {diff:.1e} (peak norm {runs[0][1]:.3f} < R1 {R1:.3f}); "
                           f"{n_frozen}/{N} members frozen, bit-identical after stop: {identical}")


# ---------------------------------------------------------------------------
# 10. zero-noise reduction


def check_zero_noise(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g, gamma=-0.1, sigma=-0.1)
    basis = default_xi_basis(g, 0)
    psi0 = _initial(g)
    T = 0.1 if quick else 1.0
    cfg = StepperConfig(DT)
    psi = psi0
    salt = Ensemble.replicate(psi0, 2, BrownianDriver(0, DT))
    E, la = psi0, Ensemble.replicate(psi0, 2, BrownianDriver(0, DT))
    scfg = StepperConfig(DT, mode="salt")
    lcfg = StepperConfig(DT, mode="lasalt")
    worst = [0.0, 0.0]
    for _ in range(int(round(T / DT))):
        psi = step_deterministic(psi, p, cfg)
        salt = step_salt_ensemble(salt, p, basis, scfg)
        E, la = step_lasalt(E, la, p, basis, lcfg)
        worst[0] = max(worst[0], float(np.abs(salt.members.data - psi.data).max()))
        worst[1] = max(worst[1], float(max(np.abs(la.members.data - psi.data).max(),
                                           np.abs(E.data - psi.data).max())))
    return CriterionResult(10, "zero-noise reduction", max(worst) <= 1e-12,
                           f"SALT {worst[0]:.1e}, LA-SALT {worst[1]:.1e} <= 1e-12 over T={T}")


# ---------------------------------------------------------------------------
# 11. spectral convergence in resolution


def analytic_state(grid: Grid, rho: float = 0.6, amplitude: float = 0.1) -> StateVector:
    """Smooth state whose Fourier coefficients decay like ``rho^|n|``."""
    x, y = grid.mesh

    def bump(a, b):
        # 1 / (1 - rho cos) has coefficients proportional to r^|n| with r < rho
        return 1.0 / (1.0 - rho * np.cos(a)) * 1.0 / (1.0 - rho * np.sin(b))

    fields = np.stack([bump(x, y + 1.0), bump(y, x), bump(x + 2.0, y - 1.0),
                       bump(y + 0.5, x), bump(x - 0.3, y + 2.0), bump(x + y, x - y)])
    fields -= fields.mean(axis=(-2, -1), keepdims=True)
    fields *= amplitude / np.sqrt((fields**2).mean(axis=(-2, -1), keepdims=True))
    return StateVector(grid, project_state(fields, grid))


def embed_spectrum(fh: np.ndarray, coarse: Grid, fine: Grid) -> np.ndarray:
    """Place coarse-grid coefficients into the fine-grid spectral layout."""
    out = np.zeros(fh.shape[:-2] + fine.spectral_shape, dtype=complex)
    h = coarse.n // 2
    m = fh.shape[-1]
    out[..., :h, :m] = fh[..., :h, :]
    out[..., fine.n - h:, :m] = fh[..., h:, :]
    return out


def check_resolution_convergence(quick: bool = False) -> CriterionResult:
    T = 0.1
    finals = {}
    for n in (32, 64, 128):
        g = _grid(n)
        p = _params(g, gamma=-0.1, sigma=-0.1)
        psi = analytic_state(g)
        cfg = StepperConfig(DT)
        for _ in range(int(round(T / DT))):
            psi = step_deterministic(psi, p, cfg)
        finals[n] = (g, to_spectral(psi.data, g))
    gf = finals[128][0]
    lifted = {n: embed_spectrum(finals[n][1], finals[n][0], gf) for n in (32, 64)}
    lifted[128] = finals[128][1]
    d1 = float(np.sqrt(squared_norm(lifted[32] - lifted[64], gf, s=2, axes=3)))
    d2 = float(np.sqrt(squared_norm(lifted[64] - lifted[128], gf, s=2, axes=3)))
    ratio = d1 / d2
    return CriterionResult(11, "resolution convergence", ratio >= 10,
                           f"H2 distances {d1:.2e} (32 vs 64), {d2:.2e} (64 vs 128), ratio {ratio:.1f} >= 10")


# ---------------------------------------------------------------------------
# 12. temporal order


def _rk3_final(psi, p, dt, T):
    cfg = StepperConfig(dt)
    for _ in range(int(round(T / dt))):
        psi = step_deterministic(psi, p, cfg)
    return psi.data


def _heun_final(psi, p, basis, N, dt, ref_dt, T, seed):
    """Heun solution driven by sums of the reference increments."""
    ratio = int(round(dt / ref_dt))
    fine = BrownianDriver(seed, ref_dt)
    ens = Ensemble.replicate(psi, N, fine)
    cfg = StepperConfig(dt, scheme="heun", mode="salt")
    for k in range(int(round(T / dt))):
        dW = sum(fine.increments(ens.member_ids, k * ratio + j, basis.M) for j in range(ratio))
        ens = step_salt_ensemble(ens, p, basis, cfg, dW)
    return ens.members.data


def check_temporal_order(quick: bool = False) -> CriterionResult:
    g = _grid()
    p = _params(g, gamma=-0.1, sigma=-0.1)
    psi = _initial(g)

    T = 0.2
    a, b, c = (_rk3_final(psi, p, dt, T) for dt in (0.02, 0.01, 0.005))
    rk3_order = math.log2(float(np.abs(a - b).max() / np.abs(b - c).max()))

    # Heun reaches strong order one only for commutative noise; a single
    # field is commutative, two generic fields are not (order one half)
    N, T = (2, 0.04) if quick else (4, 0.08)
    dts = (8e-3, 4e-3, 2e-3)
    ref_dt = dts[-1] / 64

    def pathwise_order(M):
        basis = default_xi_basis(g, M, amplitude=0.05)
        ref = _heun_final(psi, p, basis, N, ref_dt, ref_dt, T, 12)
        errs = [float(np.mean(np.sqrt(np.mean((_heun_final(psi, p, basis, N, dt, ref_dt, T, 12) - ref) ** 2,
                                              axis=(1, 2, 3))))) for dt in dts]
        return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])

    heun_order = pathwise_order(1)
    two_field = pathwise_order(2)
    passed = rk3_order >= 2.5 and heun_order >= 0.9
    return CriterionResult(12, "temporal order", passed,
                           f"RK3 Richardson order {rk3_order:.2f} >= 2.5, "
                           f"Heun pathwise order {heun_order:.2f} >= 0.9 (one noise field; "
                           f"two fields give {two_field:.2f})")


# ---------------------------------------------------------------------------

CRITERIA = {
    1: check_spectral,
    2: check_kelvin_atmosphere,
    3: check_kelvin_ocean,
    4: check_kelvin_salt,
    5: check_ito_consistency,
    6: check_lasalt_closure,
    7: check_variance_identity,
    8: check_sam_conservation,
    9: check_truncation,
    10: check_zero_noise,
    11: check_resolution_convergence,
    12: check_temporal_order,
}


def run_criterion(number: int, quick: bool = False) -> CriterionResult:
    if number not in CRITERIA:
        raise KeyError(f"no criterion {number}; choose from 1-{len(CRITERIA)}")
    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        res = CRITERIA[number](quick)
    res.seconds = time.perf_counter() - t0
    return res


def run_suite(selected=None, quick: bool = False, stream=print) -> list[CriterionResult]:
    """Run the selected criteria (all by default), printing one line each."""
    results = []
    for number in selected or sorted(CRITERIA):
        res = run_criterion(number, quick)
        if stream is not None:
            stream(res.line())
        results.append(res)
    return results
