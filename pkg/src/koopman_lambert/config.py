"""Scenario configuration: an INI file with flag overrides.

Example::

    [gravity]
    j2_enabled = false

    [problem]
    r0 = 5000, 10000, 2100
    rf = -14600, 2500, 7000
    tof = 3600

Sections and keys not given fall back to the defaults below; ``r0``,
``rf`` and ``tof`` have none.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .elements import GravityModel
from .lambert import LambertProblem, SolverConfig
from .oracles import IntegratorConfig

REQUIRED = ("r0", "rf", "tof")


class ConfigError(ValueError):
    """Missing or malformed configuration entry."""


@dataclass(frozen=True)
class BasisConfig:
    order: int | None = None
    inflation: float = 0.5
    min_half_width: float = 2e-3
    lower: tuple | None = None
    upper: tuple | None = None
    assembly: str = "auto"


@dataclass(frozen=True)
class ScanConfig:
    tof_min: float | None = None
    tof_max: float | None = None
    steps: int = 41
    warm_start: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    r0: tuple
    rf: tuple
    tof: float
    revolutions: int = 0
    prograde: bool = True
    gravity: GravityModel = field(default_factory=GravityModel)
    basis: BasisConfig = field(default_factory=BasisConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    output: str = "out"

    def problem(self, tof=None, revolutions=None) -> LambertProblem:
        return LambertProblem(
            np.array(self.r0), np.array(self.rf), self.tof if tof is None else tof,
            self.revolutions if revolutions is None else revolutions, self.gravity,
            self.prograde)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["gravity"] = self.gravity.to_dict()
        return data

    def digest(self) -> str:
        """Hash of everything except the output directory."""
        data = self.to_dict()
        data.pop("output")
        text = json.dumps(data, sort_keys=True, default=float)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _vector(text, name, size=3):
    try:
        values = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{name}: expected {size} numbers, got {text!r}") from exc
    if len(values) != size:
        raise ConfigError(f"{name}: expected {size} numbers, got {len(values)}")
    return values


def _get(parser, section, key, convert, default=None):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return convert(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str = "", overrides: dict | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from INI text; ``overrides`` win over the file.

    Recognised override keys: ``j2`` (bool), ``order``, ``revolutions``,
    ``tof``, ``output``.
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    base = GravityModel()
    try:
        gravity = GravityModel(
            _get(parser, "gravity", "mu", float, base.mu),
            _get(parser, "gravity", "radius", float, base.radius),
            _get(parser, "gravity", "j2", float, base.j2),
            overrides.get("j2", _get(parser, "gravity", "j2_enabled", _bool, base.j2_enabled)),
        )
    except ValueError as exc:
        raise ConfigError(f"[gravity] {exc}") from exc

    problem = {}
    for key in REQUIRED:
        if key == "tof" and "tof" in overrides:
            problem[key] = float(overrides["tof"])
            continue
        if not parser.has_option("problem", key):
            raise ConfigError(f"missing required field [problem] {key}")
        raw = parser.get("problem", key)
        problem[key] = _vector(raw, key) if key != "tof" else _get(parser, "problem", key, float)

    basis = BasisConfig(
        order=overrides.get("order", _get(parser, "basis", "order", int)),
        inflation=_get(parser, "basis", "inflation", float, 0.5),
        min_half_width=_get(parser, "basis", "min_half_width", float, 2e-3),
        lower=_get(parser, "basis", "lower", lambda t: _vector(t, "lower", 8)),
        upper=_get(parser, "basis", "upper", lambda t: _vector(t, "upper", 8)),
        assembly=_get(parser, "basis", "assembly", str, "auto"),
    )
    if (basis.lower is None) != (basis.upper is None):
        raise ConfigError("[basis] lower and upper must be given together")

    d = SolverConfig()
    try:
        solver = SolverConfig(
            _get(parser, "solver", "initial_damping", float, d.lm_initial_damping),
            _get(parser, "solver", "tolerance_position", float, d.lm_tolerance_position),
            _get(parser, "solver", "tolerance_time", float, d.lm_tolerance_time),
            _get(parser, "solver", "max_iterations", int, d.max_iterations),
            _get(parser, "solver", "jacobian", str, d.jacobian_mode),
            _get(parser, "solver", "time_weight", float, d.time_weight),
        )
        i = IntegratorConfig()
        integrator = IntegratorConfig(
            _get(parser, "integrator", "method", str, i.method),
            _get(parser, "integrator", "rel_tolerance", float, i.rel_tolerance),
            _get(parser, "integrator", "abs_tolerance", float, i.abs_tolerance),
            _get(parser, "integrator", "max_step", float, i.max_step),
            _get(parser, "integrator", "samples", int, i.n_samples),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    scan = ScanConfig(
        _get(parser, "scan", "tof_min", float),
        _get(parser, "scan", "tof_max", float),
        _get(parser, "scan", "steps", int, 41),
        _get(parser, "scan", "warm_start", _bool, True),
    )
    config = ScenarioConfig(
        r0=problem["r0"],
        rf=problem["rf"],
        tof=problem["tof"],
        revolutions=overrides.get("revolutions",
                                  _get(parser, "problem", "revolutions", int, 0)),
        prograde=_get(parser, "problem", "prograde", _bool, True),
        gravity=gravity,
        basis=basis,
        solver=solver,
        integrator=integrator,
        scan=scan,
        output=overrides.get("output", _get(parser, "output", "directory", str, "out")),
    )
    try:
        config.problem()
    except ValueError as exc:
        raise ConfigError(f"[problem] {exc}") from exc
    return config


def load_config(path=None, overrides=None) -> ScenarioConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)


def with_gravity(config: ScenarioConfig, j2_enabled: bool) -> ScenarioConfig:
    return replace(config, gravity=config.gravity.with_j2(j2_enabled))
