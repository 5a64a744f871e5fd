"""TOML run configuration with SI unit strings.

Dimensionful values are written as ``"<number> <unit>"`` (for example
``R = "5 nm"`` or ``a0 = "8.5625e6 V/m"``) and converted to internal units
exactly once, in :func:`load_config`. Internal units may also be given
directly with the suffixes ``hbar/B`` (time) and ``B/mu`` (field).

A minimal file::

    [system]
    geometry = "two-rotor"
    R = "5 nm"
    M = 4

    [grid]
    n = 500
    T = "1.306 ns"

    [field]
    a0 = "8.5625e6 V/m"
    b = [0.2, 0.3, 0.3, 0.2]

    [objective]
    kind = "sum-of-orientations"
    weights = [1, 1]

    [optimizer]
    j_thresh = 1.5
    max_iters = 2000
    seed = 1

    [output]
    dir = "out"
"""

import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fields as fieldmod
from .errors import ConfigError
from .observables import ObjectiveSpec, mes_state
from .optimizer import OptimizerConfig
from .system import PhysicalConstants, RotorGeometry, build_rotor_system, ground_product_state

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# SI factor for each accepted suffix, grouped by quantity
_UNITS = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "nm": 1e-9, "pm": 1e-12, "angstrom": 1e-10},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12, "fs": 1e-15},
    "field": {"V/m": 1.0, "N/C": 1.0, "kV/cm": 1e5},
    "energy": {"J": 1.0},
    "dipole": {"C*m": 1.0},
    "action": {"J*s": 1.0},
    "permittivity": {"F/m": 1.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
}
_INTERNAL = {"time": "hbar/B", "field": "B/mu"}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)\s*$")

_SECTIONS = {"system", "grid", "field", "objective", "optimizer", "output", "benchmark"}


def parse_quantity(text, kind, key="value"):
    """Convert ``"<number> <unit>"`` to SI, or to internal units for the internal suffixes.

    Returns ``(value, is_internal)``.
    """
    if not isinstance(text, str):
        raise ConfigError(f"{key}: expected a string with a {kind} unit, got {text!r}")
    m = _QUANTITY.match(text)
    if not m:
        raise ConfigError(f"{key}: cannot parse {text!r} as '<number> <unit>'")
    value, unit = float(m.group(1)), m.group(2)
    if unit == _INTERNAL.get(kind):
        return value, True
    table = _UNITS[kind]
    if unit not in table:
        allowed = sorted(table) + ([_INTERNAL[kind]] if kind in _INTERNAL else [])
        raise ConfigError(f"{key}: unit {unit!r} is not a {kind} unit; use one of {allowed}")
    return value * table[unit], False


def _time(text, consts, key):
    value, internal = parse_quantity(text, "time", key=key)
    return value if internal else value / consts.time_unit


def _field(text, consts, key):
    value, internal = parse_quantity(text, "field", key=key)
    return value if internal else value / consts.field_unit


def _si(text, kind, key):
    return parse_quantity(text, kind, key=key)[0]


def _section(raw, name, required=False):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _check_keys(sec, name, allowed):
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"[{name}] has unknown keys {sorted(extra)}")


def _int(sec, key, name, default=None):
    value = sec.get(key, default)
    if value is None:
        raise ConfigError(f"[{name}] needs {key}")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"[{name}] {key} must be an integer")
    return value


@dataclass(frozen=True, eq=False)
class BenchmarkSettings:
    separations: tuple = ()
    fields: int = 5
    seed: int = 0
    a0: float = math.nan
    methods: tuple = ("zeroth", "magnus1")


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Parsed run configuration; every quantity is already in internal units."""

    geometry: RotorGeometry
    M: int
    constants: PhysicalConstants
    n: int
    T: float
    trial: fieldmod.TrialFieldParams | None = None
    field_file: Path | None = None
    objective: ObjectiveSpec | None = None
    optimizer: OptimizerConfig | None = None
    output_dir: Path = Path("out")
    benchmark: BenchmarkSettings = field(default_factory=BenchmarkSettings)
    source: Path | None = None

    @property
    def dt(self):
        return self.T / self.n

    def build_spec(self, geometry=None):
        return build_rotor_system(geometry or self.geometry, self.M, self.constants)

    def initial_factors(self):
        return ground_product_state(self.build_spec())

    def build_field(self):
        """Trial field on the configured grid, or the field file resampled onto it."""
        if self.field_file is None:
            if self.trial is None:
                raise ConfigError("no field configured; set [field] a0 and b, or file")
            return fieldmod.trial_field(self.trial, self.n)
        return self.field_from_file(self.field_file)

    def field_from_file(self, path):
        """Load a stored field and sample-and-hold it onto the configured grid."""
        f = load_field_file(path)
        if not math.isclose(f.T, self.T, rel_tol=1e-9):
            raise ConfigError(f"{path}: field spans T = {f.T:.12g} hbar/B but the grid needs {self.T:.12g}")
        return f if f.n == self.n else fieldmod.resample_hold(f, self.n)

    @property
    def field_amplitude(self):
        """Amplitude scale for random test fields."""
        if not math.isnan(self.benchmark.a0):
            return self.benchmark.a0
        if self.trial is not None:
            return self.trial.a0
        raise ConfigError("no field amplitude configured; set [benchmark] a0")


def load_field_file(path):
    """Read a field from a CSV written by :func:`fields.write_csv` or a result JSON."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        try:
            return fieldmod.FieldGrid(np.array(data["field"]["values"], dtype=float), data["field"]["dt"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: no embedded field in result file") from exc
    return fieldmod.read_csv(path)


def _geometry(sec):
    kind = sec.get("geometry", "two-rotor")
    if kind == "two-rotor":
        R = _si(sec.get("R"), "length", "system.R")
        theta = _si(sec.get("theta", "90 deg"), "angle", "system.theta")
        return RotorGeometry.two_rotor(R, theta)
    if kind == "equilateral":
        return RotorGeometry.equilateral(_si(sec.get("R"), "length", "system.R"))
    if kind == "custom":
        pairs = sec.get("pairs")
        if not isinstance(pairs, list) or not pairs:
            raise ConfigError("custom geometry needs a [[system.pairs]] list")
        R, theta = {}, {}
        for p in pairs:
            try:
                key = (int(p["i"]), int(p["j"]))
                R[key] = _si(p["R"], "length", f"system.pairs{key}.R")
                theta[key] = _si(p["theta"], "angle", f"system.pairs{key}.theta")
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"system.pairs entries need i, j, R and theta: {exc}") from exc
        return RotorGeometry(_int(sec, "N", "system"), R, theta)
    raise ConfigError(f"unknown geometry {kind!r}; use two-rotor, equilateral or custom")


def _constants(sec):
    if not sec:
        return PhysicalConstants()
    _check_keys(sec, "system.constants", ("B", "mu", "hbar", "eps0"))
    kinds = {"B": "energy", "mu": "dipole", "hbar": "action", "eps0": "permittivity"}
    values = {k: _si(v, kinds[k], f"system.constants.{k}") for k, v in sec.items()}
    return PhysicalConstants(**values)


def _objective(sec, geom, M):
    if not sec:
        return None
    _check_keys(sec, "objective", ("kind", "weights", "target"))
    kind = sec.get("kind", "sum-of-orientations")
    if kind == "projection-onto-target":
        target = sec.get("target", "mes")
        if target != "mes":
            raise ConfigError("objective.target supports only 'mes'")
        if geom.N != 2:
            raise ConfigError("the maximally entangled target is defined for two rotors")
        return ObjectiveSpec.projection(mes_state(M))
    weights = sec.get("weights", [1.0] * geom.N)
    if len(weights) != geom.N:
        raise ConfigError(f"objective.weights needs {geom.N} entries")
    return ObjectiveSpec(kind, tuple(weights))


def _optimizer(sec):
    if not sec:
        return None
    allowed = ("j_thresh", "max_iters", "perturb_scale", "seed", "propagator", "log_every", "n_freq", "batch")
    _check_keys(sec, "optimizer", allowed)
    j_thresh = sec.get("j_thresh", math.inf)
    if isinstance(j_thresh, str):
        try:
            j_thresh = float(j_thresh)
        except ValueError as exc:
            raise ConfigError(f"optimizer.j_thresh: cannot read {j_thresh!r} as a number") from exc
    return OptimizerConfig(
        j_thresh=float(j_thresh),
        max_iters=_int(sec, "max_iters", "optimizer"),
        perturb_scale=float(sec.get("perturb_scale", 0.02)),
        seed=_int(sec, "seed", "optimizer", 0),
        propagator=sec.get("propagator", "magnus1"),
        log_every=_int(sec, "log_every", "optimizer", 0),
        n_freq=_int(sec, "n_freq", "optimizer", 4),
        batch=_int(sec, "batch", "optimizer", 1),
    )


def load_config(path):
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, base=path.parent, source=path)


def parse_config(raw, base=Path("."), source=None):
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    base = Path(base)
    sysec = _section(raw, "system", required=True)
    _check_keys(sysec, "system", ("geometry", "R", "theta", "M", "N", "pairs", "constants"))
    consts = _constants(sysec.get("constants", {}))
    geom = _geometry(sysec)
    M = _int(sysec, "M", "system")
    if M < 0:
        raise ConfigError("system.M must be non-negative")

    grid = _section(raw, "grid", required=True)
    _check_keys(grid, "grid", ("n", "T"))
    n = _int(grid, "n", "grid")
    if n < 1:
        raise ConfigError("grid.n must be positive")
    T = _time(grid.get("T"), consts, "grid.T")
    if not T > 0:
        raise ConfigError("grid.T must be positive")

    fsec = _section(raw, "field")
    _check_keys(fsec, "field", ("a0", "b", "file"))
    trial = field_file = None
    if "file" in fsec:
        field_file = (base / fsec["file"]).resolve()
        if not field_file.is_file():
            raise ConfigError(f"field file {field_file} does not exist")
    elif "a0" in fsec:
        trial = fieldmod.TrialFieldParams(_field(fsec["a0"], consts, "field.a0"), tuple(fsec.get("b", (1.0,))), T)

    bsec = _section(raw, "benchmark")
    _check_keys(bsec, "benchmark", ("separations", "fields", "seed", "a0", "methods"))
    bench = BenchmarkSettings(
        separations=tuple(_si(r, "length", "benchmark.separations") for r in bsec.get("separations", ())),
        fields=_int(bsec, "fields", "benchmark", 5),
        seed=_int(bsec, "seed", "benchmark", 0),
        a0=_field(bsec["a0"], consts, "benchmark.a0") if "a0" in bsec else math.nan,
        methods=tuple(bsec.get("methods", ("zeroth", "magnus1"))),
    )

    out = _section(raw, "output")
    _check_keys(out, "output", ("dir",))
    return RunConfig(
        geometry=geom,
        M=M,
        constants=consts,
        n=n,
        T=T,
        trial=trial,
        field_file=field_file,
        objective=_objective(_section(raw, "objective"), geom, M),
        optimizer=_optimizer(_section(raw, "optimizer")),
        output_dir=(base / out.get("dir", "out")).resolve(),
        benchmark=bench,
        source=source,
    )
