"""Pseudospectral coupled atmosphere-ocean model with stochastic transport.

Modes: deterministic, SALT ensembles, Lagrangian-averaged SALT
(closed expectation plus linear members) and a compressible rotating
atmosphere.  See ``salt-climate --help`` for the command line.
"""

from .config import ConfigError, RunConfig, load_config, parse_config
from .diagnostics import (
    DiagnosticsRecord,
    MaterialLoop,
    casimir,
    circulation,
    energy_sam,
    ensemble_variance,
    potential_vorticity,
    variance_rhs,
)
from .dynamics import (
    CompressibleState,
    Ensemble,
    PositivityError,
    SamParams,
    StepperConfig,
    step_deterministic,
    step_lasalt,
    step_salt_ensemble,
    step_sam_compressible,
)
from .model_ops import (
    CoriolisField,
    NumericalBlowupError,
    PhysParams,
    StateVector,
    TruncationConfig,
    cutoff_g,
    rhs_deterministic,
)
from .noise import BrownianDriver, NoiseBasis, TransportNoise, default_xi_basis
from .runner import recompute_diagnostics, run
from .snapshot import Snapshot, SnapshotError, read_snapshot, write_snapshot
from .spectral import Grid

__version__ = "0.1.0"

__all__ = [
    "BrownianDriver", "CompressibleState", "ConfigError", "CoriolisField", "DiagnosticsRecord",
    "Ensemble", "Grid", "MaterialLoop", "NoiseBasis", "NumericalBlowupError", "PhysParams",
    "PositivityError", "RunConfig", "SamParams", "Snapshot", "SnapshotError", "StateVector",
    "StepperConfig", "TransportNoise", "TruncationConfig", "casimir", "circulation", "cutoff_g",
    "default_xi_basis", "energy_sam", "ensemble_variance", "load_config", "parse_config",
    "potential_vorticity", "read_snapshot", "recompute_diagnostics", "rhs_deterministic", "run",
    "step_deterministic", "step_lasalt", "step_salt_ensemble", "step_sam_compressible",
    "variance_rhs", "write_snapshot",
]
