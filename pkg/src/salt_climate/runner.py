"""Run orchestration: initial data, time loop, diagnostics table and snapshots.

Output directory layout::

    config.toml                 the resolved configuration
    diagnostics.csv             one row per output time
    snapshots/<step>/           state.snap | expectation.snap + member_<m>.snap
                                loops.json, meta.json
    blowup.json                 only if the deterministic part blew up

Diagnostics rows are computed from exactly the arrays written to the
snapshots, so :func:`recompute_diagnostics` reproduces them bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .diagnostics import (
    CSV_COLUMNS,
    DiagnosticsRecord,
    MaterialLoop,
    casimir,
    circulation,
    energy_sam,
    ensemble_variance,
    resample_if_stretched,
    state_energy,
    variance_rhs,
)
from .dynamics import (
    CompressibleState,
    Ensemble,
    step_deterministic,
    step_lasalt,
    step_salt_ensemble,
    step_sam_compressible,
)
from .model_ops import COMPONENTS, NumericalBlowupError, StateVector, random_state, state_norm
from .noise import BrownianDriver
from .snapshot import Snapshot, read_loops, read_snapshot, write_loops, write_snapshot

SAM_FIELDS = ("u_x", "u_y", "D", "theta")


@dataclass
class RunResult:
    config: RunConfig
    records: list = field(default_factory=list)
    output_dir: Path | None = None
    blowup: dict | None = None
    final: object = None


def initial_state(cfg: RunConfig, grid=None) -> StateVector:
    """Band-limited random coupled state from ``init_seed``."""
    grid = grid or cfg.grid()
    return random_state(grid, np.random.default_rng(cfg.init_seed), cfg.init_kmax, cfg.init_amplitude)


def initial_compressible(cfg: RunConfig, grid=None) -> CompressibleState:
    """Random velocity, perturbed density and uniform potential temperature."""
    grid = grid or cfg.grid()
    r = random_state(grid, np.random.default_rng(cfg.init_seed), cfg.init_kmax, 1.0).data
    D = 1.0 + cfg.density_amplitude * r[2] / max(1.0, float(np.abs(r[2]).max()))
    return CompressibleState(cfg.init_amplitude * r[0:2], D, np.full(grid.shape, cfg.theta0),
                             cfg.sam_params(grid))


def initial_loops(cfg: RunConfig, grid) -> dict:
    pts = MaterialLoop.circle(grid, cfg.center, cfg.radius, cfg.K).points
    if cfg.mode == "sam":
        return {"atmosphere": pts}
    if cfg.mode == "lasalt":
        return {"atmosphere": np.broadcast_to(pts, (cfg.members,) + pts.shape).copy(), "ocean": pts.copy()}
    if cfg.mode == "salt":
        return {k: np.broadcast_to(pts, (cfg.members,) + pts.shape).copy() for k in ("atmosphere", "ocean")}
    return {"atmosphere": pts, "ocean": pts.copy()}


# ---------------------------------------------------------------------------
# diagnostics rows


def _mean_circ(loops, u, cor, Ro, grid) -> float:
    return float(np.mean(circulation(loops, u, cor, Ro, grid=grid)))


def compute_record(cfg: RunConfig, t: float, fields: dict, loops: dict, meta: dict, grid,
                   params=None, basis=None) -> DiagnosticsRecord:
    """Diagnostics row from raw arrays.

    ``fields`` holds ``"state"`` (deterministic, compressible), ``"members"``
    (SALT, LA-SALT) and ``"expectation"`` (LA-SALT).
    """
    params = params or cfg.phys_params(grid)
    cor = params.coriolis
    rec = DiagnosticsRecord(t=t)
    s = cfg.s
    if cfg.mode == "deterministic":
        x = fields["state"]
        rec.circulation_a = _mean_circ(loops["atmosphere"], x[0:2], cor, params.Ro_a, grid)
        rec.circulation_o = _mean_circ(loops["ocean"], x[3:5], cor, params.Ro_o, grid)
        rec.energy = state_energy(x, grid)
        rec.h_s_norm_det = float(state_norm(x, grid, s))
    elif cfg.mode == "sam":
        x = fields["state"]
        st = CompressibleState(x[0:2], x[2], x[3], cfg.sam_params(grid))
        rec.circulation_a = _mean_circ(loops["atmosphere"], x[0:2], cor, cfg.Ro, grid)
        rec.energy = energy_sam(st)
        rec.casimir_q2 = casimir(st, np.square)
    else:
        mem = fields["members"]
        if cfg.mode == "salt":
            det = mem.mean(axis=0)
            rec.variance_rhs = math.nan
        else:
            det = fields["expectation"]
            rec.variance_rhs = variance_rhs(mem, det, params, basis if basis is not None else cfg.basis(grid))
        rec.theta_variance = ensemble_variance(mem, det, grid)
        rec.circulation_a = _mean_circ(loops["atmosphere"], mem[:, 0:2], cor, params.Ro_a, grid)
        ocean_u = mem[:, 3:5] if loops["ocean"].ndim == 3 else det[3:5]
        rec.circulation_o = _mean_circ(loops["ocean"], ocean_u, cor, params.Ro_o, grid)
        rec.energy = state_energy(det, grid)
        rec.h_s_norm_det = float(state_norm(det, grid, s))
        rec.h_s_norm_mean = float(np.mean(state_norm(mem, grid, s)))
        rec.member_frozen_count = int(np.sum(~np.isnan(np.asarray(meta.get("frozen_at", []), dtype=float))))
    return rec


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, records) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])
    return path


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(CSV_COLUMNS))


# ---------------------------------------------------------------------------
# snapshots


def _write_set(root: Path, cfg: RunConfig, grid, step: int, t: float, fields: dict, loops: dict, meta: dict):
    d = root / "snapshots" / f"{step:08d}"
    if "state" in fields:
        names = SAM_FIELDS if cfg.mode == "sam" else COMPONENTS
        write_snapshot(d / "state.snap", Snapshot(grid, t, step, cfg.mode, 0, names, fields["state"]))
    if "expectation" in fields:
        write_snapshot(d / "expectation.snap", Snapshot(grid, t, step, cfg.mode, -1, COMPONENTS, fields["expectation"]))
    if "members" in fields:
        for m, x in enumerate(fields["members"]):
            write_snapshot(d / f"member_{m:05d}.snap", Snapshot(grid, t, step, cfg.mode, m, COMPONENTS, x))
    write_loops(d / "loops.json", loops)
    (d / "meta.json").write_text(json.dumps({"t": t.hex(), "step": step, **meta}))


def _read_set(d: Path) -> tuple[float, dict, dict, dict]:
    meta = json.loads((d / "meta.json").read_text())
    t = float.fromhex(meta.pop("t"))
    fields = {}
    if (d / "state.snap").exists():
        fields["state"] = read_snapshot(d / "state.snap").data
    if (d / "expectation.snap").exists():
        fields["expectation"] = read_snapshot(d / "expectation.snap").data
    members = sorted(d.glob("member_*.snap"))
    if members:
        fields["members"] = np.stack([read_snapshot(p).data for p in members])
    return t, fields, read_loops(d / "loops.json"), meta


# ---------------------------------------------------------------------------
# main loop


def _frozen_meta(ens: Ensemble) -> dict:
    return {"frozen_at": [None if np.isnan(v) else float(v) for v in ens.frozen_at],
            "failed": [bool(v) for v in ens.failed]}


def run(cfg: RunConfig, write: bool = True, progress=None) -> RunResult:
    """Execute the configured mode over ``[0, T]``.

    Diagnostics (and snapshots when ``write``) are produced at step 0, every
    ``output_interval`` and at the final step.  A blow-up of the
    deterministic part stops the run and is recorded with its time.
    """
    grid = cfg.grid()
    params = cfg.phys_params(grid)
    basis = cfg.basis(grid)
    step_cfg = cfg.stepper()
    root = Path(cfg.output_dir)
    result = RunResult(cfg, output_dir=root if write else None)
    if write:
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.toml").write_text(cfg.to_toml())
    loops = initial_loops(cfg, grid)
    threshold = 4.0 * grid.dx
    driver = BrownianDriver(cfg.seed, cfg.dt)

    if cfg.mode == "sam":
        state = initial_compressible(cfg, grid)
    else:
        psi = initial_state(cfg, grid)
        if cfg.mode in ("salt", "lasalt"):
            ens = Ensemble.replicate(psi, cfg.members, driver)
            ens.markers = loops
            loops = {}

    def snapshot_fields():
        if cfg.mode == "sam":
            return {"state": np.stack([state.u[0], state.u[1], state.D, state.theta])}, {}
        if cfg.mode == "deterministic":
            return {"state": psi.data.copy()}, {}
        f = {"members": ens.members.data.copy()}
        if cfg.mode == "lasalt":
            f["expectation"] = psi.data.copy()
        return f, _frozen_meta(ens)

    def emit(step: int):
        t = step * cfg.dt
        f, meta = snapshot_fields()
        current = dict(ens.markers) if cfg.mode in ("salt", "lasalt") else dict(loops)
        if write:
            _write_set(root, cfg, grid, step, t, f, current, meta)
        result.records.append(compute_record(cfg, t, f, current, meta, grid, params, basis))
        if progress is not None:
            progress(result.records[-1])

    emit(0)
    every = cfg.output_every
    for k in range(cfg.n_steps):
        t = k * cfg.dt
        try:
            if cfg.mode == "deterministic":
                psi = step_deterministic(psi, params, step_cfg, loops, t)
            elif cfg.mode == "salt":
                ens = step_salt_ensemble(ens, params, basis, step_cfg)
            elif cfg.mode == "lasalt":
                psi, ens = step_lasalt(psi, ens, params, basis, step_cfg)
            else:
                dW = driver.increments([0], k, basis.M)[0] if basis.M else None
                state = step_sam_compressible(state, basis if basis.M else None, step_cfg, dW, loops)
        except (NumericalBlowupError, FloatingPointError, ValueError) as exc:
            result.blowup = {"time": t, "step": k, "error": type(exc).__name__, "message": str(exc)}
            if write:
                (root / "blowup.json").write_text(json.dumps(result.blowup))
            break
        for key in list(loops):
            loops[key] = resample_if_stretched(loops[key], threshold)
        if cfg.mode in ("salt", "lasalt"):
            for key in list(ens.markers):
                ens.markers[key] = resample_if_stretched(ens.markers[key], threshold)
        if (k + 1) % every == 0 or k + 1 == cfg.n_steps:
            emit(k + 1)
    if write:
        write_csv(root / "diagnostics.csv", result.records)
    result.final = state if cfg.mode == "sam" else (psi if cfg.mode == "deterministic" else (psi, ens))
    return result


def recompute_diagnostics(output_dir) -> list:
    """Rebuild every diagnostics row from the snapshots in ``output_dir``."""
    root = Path(output_dir)
    cfg = load_config(root / "config.toml")
    grid = cfg.grid()
    params = cfg.phys_params(grid)
    basis = cfg.basis(grid)
    records = []
    for d in sorted((root / "snapshots").iterdir()):
        t, fields, loops, meta = _read_set(d)
        records.append(compute_record(cfg, t, fields, loops, meta, grid, params, basis))
    return records
