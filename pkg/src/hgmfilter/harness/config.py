"""Plain ``key = value`` experiment configuration with dotted section names."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..filters import FILTER_NAMES, UkfParams
from ..hgm import METHODS, SolverConfig
from ..oracle import QuadratureConfig


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "example5"
    filters: tuple[str, ...] = ("oracle", "pf", "ukf", "ekf")
    realizations: int = 300
    steps: int = 50
    seed: int = 0
    out_dir: str = "results"
    solver_method: str = "abm4"
    solver_steps_per_unit: int = 1000
    solver_min_steps: int = 100
    solver_min_denominator: float = 1e-8
    solver_pole_scan_samples: int | None = None
    quadrature_hermite_order: int = 64
    quadrature_truncation_sigmas: float = 8.0
    quadrature_tolerance: float = 1e-10
    pf_particles: int = 100
    ukf_alpha: float = 1.0
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    hgm_pfaffian_file: str = ""
    hgm_init_table_file: str = ""
    init_mean: tuple[float, ...] = (0.0,)
    init_var: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if not self.filters:
            raise ConfigError("at least one filter is required")
        for f in self.filters:
            if f not in FILTER_NAMES:
                raise ConfigError(f"unknown filter {f!r}; choose from {', '.join(FILTER_NAMES)}")
        if self.solver_method not in METHODS:
            raise ConfigError(f"unknown solver.method {self.solver_method!r}")
        if self.pf_particles < 1:
            raise ConfigError("pf.particles must be at least 1")
        if len(self.init_mean) != len(self.init_var):
            raise ConfigError("init.mean and init.var must have the same length")
        if any(v <= 0 for v in self.init_var):
            raise ConfigError("init.var entries must be positive")
        for key in ("hgm_pfaffian_file", "hgm_init_table_file"):
            path = getattr(self, key)
            if path and not _resolve(path).exists():
                raise ConfigError(f"{_dotted(key)}: file {path!r} not found")

    def solver(self) -> SolverConfig:
        try:
            return SolverConfig(
                self.solver_method, self.solver_steps_per_unit, self.solver_min_steps,
                None, self.solver_pole_scan_samples, self.solver_min_denominator,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def quadrature(self) -> QuadratureConfig:
        try:
            return QuadratureConfig(
                hermite_order=self.quadrature_hermite_order,
                truncation_sigmas=self.quadrature_truncation_sigmas,
                tolerance=self.quadrature_tolerance,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def ukf(self) -> UkfParams:
        return UkfParams(self.ukf_alpha, self.ukf_beta, self.ukf_kappa)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _resolve(path: str) -> Path:
    """A bare fixture name resolves to the packaged data directory."""
    p = Path(path)
    if p.exists():
        return p
    from ..pfaffian import fixture_path

    return fixture_path(path)


resolve_path = _resolve


def _dotted(attr: str) -> str:
    for prefix in ("solver", "quadrature", "pf", "ukf", "hgm", "init"):
        if attr.startswith(prefix + "_"):
            return prefix + "." + attr[len(prefix) + 1:]
    return attr


KEYS = {_dotted(f.name): f.name for f in fields(ExperimentConfig)}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(attr: str, text: str, lineno: int):
    kind = ExperimentConfig.__dataclass_fields__[attr].type
    try:
        if attr == "filters":
            return tuple(s.strip() for s in text.split(",") if s.strip())
        if attr in ("init_mean", "init_var"):
            return tuple(float(s) for s in text.split(","))
        if kind == "int":
            return int(text)
        if kind == "int | None":
            return None if text.lower() == "none" else int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {text!r} for {_dotted(attr)}") from None


def loads_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(KEYS)}")
        attr = KEYS[key]
        if attr in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[attr] = _parse_value(attr, value, lineno)
    return replace(base or ExperimentConfig(), **values)


def dumps_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{key} = {_format(getattr(cfg, attr))}\n" for key, attr in KEYS.items())


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads_config(text)
