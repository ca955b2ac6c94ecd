"""Run configuration: a TOML document mapped onto a validated ``RunConfig``.

Every constant that enters an equation is a key here.  Sections and
defaults::

    [grid]     L = 2 pi, n = 64, dealias_fraction = 2/3
    [params]   Ro_a = Ro_o = 1, Re_* = Pe_* = inf, gamma = sigma = 0, f0 = 1
    [sam]      kappa = 1, alpha = 1.4, Ro = 1, theta0 = 1, density_amplitude = 0.05
    [trunc]    R_cut = inf, delta = 1, s = 2
    [noise]    M = 0, amplitude = 0.05, decay = 2, sign = 1, solenoidal = false
    [run]      mode = "deterministic", scheme = "rk3", dt = 1e-3, T = 1,
               members = 1, seed = 0, output_interval = 0.1,
               output_dir = "output", init_amplitude = 0.1, init_kmax = 2,
               init_seed = 0, strict_signs = false, abort_on_blowup = false
    [loop]     center = [pi, pi], radius = 1, K = 256

``inf`` and ``nan`` are written as TOML floats (``inf``).
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .dynamics import MODES, SCHEMES, SamParams, StepperConfig
from .model_ops import CoriolisField, PhysParams, TruncationConfig
from .noise import NoiseBasis, default_xi_basis
from .spectral import Grid


class ConfigError(ValueError):
    """All violations found in a configuration document."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# section -> field names; field names are unique across sections
SECTIONS = {
    "grid": ("L", "n", "dealias_fraction"),
    "params": ("Ro_a", "Ro_o", "Re_a", "Re_o", "Pe_a", "Pe_o", "gamma", "sigma", "f0"),
    "sam": ("kappa", "alpha", "Ro", "theta0", "density_amplitude"),
    "trunc": ("R_cut", "delta", "s"),
    "noise": ("M", "amplitude", "decay", "sign", "solenoidal"),
    "run": ("mode", "scheme", "dt", "T", "members", "seed", "output_interval", "output_dir",
            "init_amplitude", "init_kmax", "init_seed", "strict_signs", "abort_on_blowup"),
    "loop": ("center", "radius", "K"),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; see the module docstring for the schema."""

    L: float = 2 * math.pi
    n: int = 64
    dealias_fraction: float = 2.0 / 3.0
    Ro_a: float = 1.0
    Ro_o: float = 1.0
    Re_a: float = math.inf
    Re_o: float = math.inf
    Pe_a: float = math.inf
    Pe_o: float = math.inf
    gamma: float = 0.0
    sigma: float = 0.0
    f0: float = 1.0
    kappa: float = 1.0
    alpha: float = 1.4
    Ro: float = 1.0
    theta0: float = 1.0
    density_amplitude: float = 0.05
    R_cut: float = math.inf
    delta: float = 1.0
    s: int = 2
    M: int = 0
    amplitude: float = 0.05
    decay: float = 2.0
    sign: int = 1
    solenoidal: bool = False
    mode: str = "deterministic"
    scheme: str = "rk3"
    dt: float = 1e-3
    T: float = 1.0
    members: int = 1
    seed: int = 0
    output_interval: float = 0.1
    output_dir: str = "output"
    init_amplitude: float = 0.1
    init_kmax: int = 2
    init_seed: int = 0
    strict_signs: bool = False
    abort_on_blowup: bool = False
    center: tuple = (math.pi, math.pi)
    radius: float = 1.0
    K: int = 256

    # -- builders ---------------------------------------------------------

    def grid(self) -> Grid:
        return Grid(self.L, self.n, self.dealias_fraction)

    def coriolis(self, grid: Grid | None = None) -> CoriolisField:
        grid = grid or self.grid()
        return CoriolisField.sinusoidal(grid, self.f0)

    def phys_params(self, grid: Grid | None = None) -> PhysParams:
        return PhysParams(self.coriolis(grid), self.Ro_a, self.Ro_o, self.Re_a, self.Re_o,
                          self.Pe_a, self.Pe_o, self.gamma, self.sigma)

    def sam_params(self, grid: Grid | None = None) -> SamParams:
        return SamParams(self.kappa, self.alpha, self.Ro, self.coriolis(grid))

    def truncation(self) -> TruncationConfig:
        return TruncationConfig(self.R_cut, self.delta, self.s)

    def basis(self, grid: Grid | None = None) -> NoiseBasis:
        return default_xi_basis(grid or self.grid(), self.M, self.amplitude, self.decay,
                                self.solenoidal, self.sign)

    def stepper(self) -> StepperConfig:
        return StepperConfig(self.dt, self.scheme, self.truncation(), self.mode, self.abort_on_blowup)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def output_every(self) -> int:
        return max(1, int(round(self.output_interval / self.dt)))

    def to_toml(self) -> str:
        """Serialize to a document that :func:`parse_config` maps back to ``self``."""
        values = asdict(self)
        lines = []
        for section, names in SECTIONS.items():
            lines.append(f"[{section}]")
            for name in names:
                lines.append(f"{name} = {_toml_value(values[name])}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, **kw) -> "RunConfig":
        """Copy with selected fields replaced, re-validated."""
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        problems = validate(cfg)
        if problems:
            raise ConfigError(problems)
        return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value, problems: list[str]):
    kind = _TYPES[name]
    if kind == "bool":
        if not isinstance(value, bool):
            problems.append(f"{name}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{name}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name}: expected a number, got {value!r}")
            return value
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            problems.append(f"{name}: expected a string, got {value!r}")
        return value
    if kind == "tuple":
        if not (isinstance(value, list) and len(value) == 2
                and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
            problems.append(f"{name}: expected two numbers, got {value!r}")
            return value
        return tuple(float(x) for x in value)
    return value  # pragma: no cover


def validate(cfg: RunConfig) -> list[str]:
    """Every constraint violation of ``cfg``, in schema order."""
    p: list[str] = []

    def positive(name):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and v > 0):
            p.append(f"{name}: must be positive, got {v!r}")

    def finite_positive(name):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            p.append(f"{name}: must be finite and positive, got {v!r}")

    finite_positive("L")
    if not (isinstance(cfg.n, int) and cfg.n >= 8 and cfg.n % 2 == 0):
        p.append(f"n: must be an even integer >= 8, got {cfg.n!r}")
    if not (isinstance(cfg.dealias_fraction, float) and 0 < cfg.dealias_fraction <= 1):
        p.append(f"dealias_fraction: must lie in (0, 1], got {cfg.dealias_fraction!r}")
    for name in ("Ro_a", "Ro_o", "Re_a", "Re_o", "Pe_a", "Pe_o"):
        positive(name)
    for name in ("gamma", "sigma", "f0"):
        v = getattr(cfg, name)
        if not (isinstance(v, float) and math.isfinite(v)):
            p.append(f"{name}: must be finite, got {v!r}")
    if cfg.strict_signs:
        for name in ("gamma", "sigma"):
            v = getattr(cfg, name)
            if isinstance(v, float) and v > 0:
                p.append(f"{name}: must be <= 0 with strict_signs "
                         f"(coupling constants gamma, sigma < 0), got {v!r}")
    finite_positive("kappa")
    if not (isinstance(cfg.alpha, float) and cfg.alpha > 1):
        p.append(f"alpha: must exceed 1, got {cfg.alpha!r}")
    finite_positive("Ro")
    finite_positive("theta0")
    if not (isinstance(cfg.density_amplitude, float) and 0 <= cfg.density_amplitude < 1):
        p.append(f"density_amplitude: must lie in [0, 1), got {cfg.density_amplitude!r}")
    positive("R_cut")
    finite_positive("delta")
    if not (isinstance(cfg.s, int) and cfg.s >= 0):
        p.append(f"s: must be a non-negative integer, got {cfg.s!r}")
    if not (isinstance(cfg.M, int) and cfg.M >= 0):
        p.append(f"M: must be a non-negative integer, got {cfg.M!r}")
    if not (isinstance(cfg.amplitude, float) and math.isfinite(cfg.amplitude)):
        p.append(f"amplitude: must be finite, got {cfg.amplitude!r}")
    finite_positive("decay")
    if cfg.sign not in (1, -1):
        p.append(f"sign: must be 1 or -1, got {cfg.sign!r}")
    if cfg.mode not in MODES:
        p.append(f"mode: must be one of {', '.join(MODES)}, got {cfg.mode!r}")
    if cfg.scheme not in SCHEMES:
        p.append(f"scheme: must be one of {', '.join(SCHEMES)}, got {cfg.scheme!r}")
    finite_positive("dt")
    if not (isinstance(cfg.T, float) and math.isfinite(cfg.T) and cfg.T >= 0):
        p.append(f"T: must be finite and non-negative, got {cfg.T!r}")
    if not (isinstance(cfg.members, int) and cfg.members >= 1):
        p.append(f"members: must be a positive integer, got {cfg.members!r}")
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64):
        p.append(f"seed: must be an unsigned 64-bit integer, got {cfg.seed!r}")
    finite_positive("output_interval")
    if not (isinstance(cfg.output_dir, str) and cfg.output_dir):
        p.append("output_dir: must be a non-empty string")
    if not (isinstance(cfg.init_amplitude, float) and math.isfinite(cfg.init_amplitude) and cfg.init_amplitude >= 0):
        p.append(f"init_amplitude: must be finite and non-negative, got {cfg.init_amplitude!r}")
    if not (isinstance(cfg.init_kmax, int) and cfg.init_kmax >= 1):
        p.append(f"init_kmax: must be a positive integer, got {cfg.init_kmax!r}")
    if not (isinstance(cfg.init_seed, int) and cfg.init_seed >= 0):
        p.append(f"init_seed: must be a non-negative integer, got {cfg.init_seed!r}")
    finite_positive("radius")
    if not (isinstance(cfg.K, int) and cfg.K >= 3):
        p.append(f"K: must be an integer >= 3, got {cfg.K!r}")
    if cfg.mode == "sam" and cfg.scheme == "euler_maruyama":
        p.append("scheme: the compressible model supports rk3 and heun only")
    return p


def parse_config(text: str) -> RunConfig:
    """Parse a TOML document into a validated :class:`RunConfig`.

    Raises
    ------
    ConfigError
        Listing every unknown key, type error and constraint violation.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    problems: list[str] = []
    values = {}
    for section, body in doc.items():
        if section not in SECTIONS:
            problems.append(f"unknown section [{section}]")
            continue
        if not isinstance(body, dict):
            problems.append(f"{section}: expected a table")
            continue
        for key, value in body.items():
            if key not in SECTIONS[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            values[key] = _coerce(key, value, problems)
    cfg = RunConfig(**values)
    problems += [v for v in validate(cfg) if v.split(":")[0] not in _names_in(problems)]
    if problems:
        raise ConfigError(problems)
    return cfg


def _names_in(problems: list[str]) -> set[str]:
    return {v.split(":")[0] for v in problems}


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
