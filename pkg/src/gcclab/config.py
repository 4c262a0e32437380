"""Scenario configuration: dataclasses loaded from YAML with strict validation.

Unknown keys and type mismatches raise ConfigError naming the dotted field
path.  Every default is materialised by ``to_dict`` so the manifest echoes
the complete configuration.
"""

from __future__ import annotations

import dataclasses
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

_EXP_FLOAT = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class SpeedConfig:
    kind: str = "constant"  # constant | gaussian_bump
    value: float = 1.0
    amplitude: float = 0.0
    center: list = field(default_factory=lambda: [0.5, 0.5])
    width: float = 0.2

    def validate(self, path):
        _choice(self.kind, ("constant", "gaussian_bump"), path + ".kind")
        _positive(self.value, path + ".value")
        if self.kind == "gaussian_bump":
            _positive(self.width, path + ".width")
            _vector(self.center, 2, path + ".center")
            if self.amplitude <= -1:
                raise ConfigError(path + ".amplitude", "must exceed -1 so the speed stays positive")


@dataclass
class DomainConfig:
    shape: str = "square"  # square | rectangle | polygon
    width: float = 1.0
    height: float = 1.0
    vertices: list = field(default_factory=list)
    speed: SpeedConfig = field(default_factory=SpeedConfig)

    def validate(self, path):
        _choice(self.shape, ("square", "rectangle", "polygon"), path + ".shape")
        _positive(self.width, path + ".width")
        _positive(self.height, path + ".height")
        if self.shape == "polygon":
            if len(self.vertices) < 3:
                raise ConfigError(path + ".vertices", "a polygon needs at least 3 vertices")
            for i, v in enumerate(self.vertices):
                _vector(v, 2, f"{path}.vertices[{i}]")
        self.speed.validate(path + ".speed")


@dataclass
class RegionConfig:
    kind: str = "admissible"  # admissible | preset | mask
    epsilon: float = 0.1
    epsilon0: float | None = None  # default epsilon / 2
    k: int = 4
    build_resolution: int | None = None  # default: smallest feasible power of two >= resolution
    preset: str = "omega2"
    params: dict = field(default_factory=dict)
    mask_file: str | None = None

    def validate(self, path):
        _choice(self.kind, ("admissible", "preset", "mask"), path + ".kind")
        _positive(self.epsilon, path + ".epsilon")
        if self.epsilon0 is not None and not 0 < self.epsilon0 < self.epsilon:
            raise ConfigError(path + ".epsilon0", "must lie in (0, epsilon)")
        if self.k < 4:
            raise ConfigError(path + ".k", "must be a product a*b with a, b >= 2")
        if self.build_resolution is not None and self.build_resolution < 8:
            raise ConfigError(path + ".build_resolution", "must be at least 8")
        if self.kind == "preset":
            _choice(self.preset, ("omega1", "omega2", "omega3", "corner", "whole"), path + ".preset")
        if self.kind == "mask" and not self.mask_file:
            raise ConfigError(path + ".mask_file", "required when kind is 'mask'")


@dataclass
class SolverConfig:
    T: float | None = None  # default: max(2 diameter, potential GCC time)
    dt: float | None = None
    cfl: float = 0.5

    def validate(self, path):
        if self.T is not None:
            _positive(self.T, path + ".T")
        if self.dt is not None:
            _positive(self.dt, path + ".dt")
        if not 0 < self.cfl <= 2**-0.5:
            raise ConfigError(path + ".cfl", "must lie in (0, 1/sqrt(2)]")


@dataclass
class NonlinearityConfig:
    f: str = "cubic"  # zero | cubic | linear
    kappa: float = 0.0
    k: float = 0.0
    g: str = "identity"  # identity | arctan
    g_slope: float = 1.0
    beta: float = 0.5

    def validate(self, path):
        _choice(self.f, ("zero", "cubic", "linear"), path + ".f")
        _choice(self.g, ("identity", "arctan"), path + ".g")
        _positive(self.g_slope, path + ".g_slope")
        if self.beta < 0:
            raise ConfigError(path + ".beta", "must be nonnegative")


@dataclass
class DampingConfig:
    where: str = "region"  # region | uniform | none
    a0: float = 1.0
    background: float = 0.0

    def validate(self, path):
        _choice(self.where, ("region", "uniform", "none"), path + ".where")
        if self.a0 < 0 or self.background < 0:
            raise ConfigError(path, "damping coefficients must be nonnegative")


@dataclass
class GccConfig:
    n_pos: int = 32
    n_dir: int = 64
    t_max: float = 100.0
    corner_policy: str = "terminate"
    paths: int = 4

    def validate(self, path):
        _choice(self.corner_policy, ("terminate", "retro"), path + ".corner_policy")
        for name in ("n_pos", "n_dir"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name}", "must be positive")
        _positive(self.t_max, path + ".t_max")


@dataclass
class DataConfig:
    kind: str = "random"  # random | eigenmode | beam
    seed: int = 2024
    count: int = 64
    modes: int = 16
    norm: float = 1.0
    beam_width: float = 0.2
    beam_n: int = 32

    def validate(self, path):
        _choice(self.kind, ("random", "eigenmode", "beam"), path + ".kind")
        if self.count < 1:
            raise ConfigError(path + ".count", "must be positive")
        if self.modes < 1:
            raise ConfigError(path + ".modes", "must be positive")
        _positive(self.norm, path + ".norm")
        _positive(self.beam_width, path + ".beam_width")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    gcc: GccConfig = field(default_factory=GccConfig)
    levels: int = 256
    pairs: int = 10
    pair_spread: float = 0.5
    output_times: int = 200
    threshold: float = 1e-6
    mu: float = 2.0
    eta: float = 1.0
    windows: int = 3

    def validate(self, path):
        self.data.validate(path + ".data")
        self.gcc.validate(path + ".gcc")
        if self.levels < 2:
            raise ConfigError(path + ".levels", "must be at least 2")
        if self.pairs < 1:
            raise ConfigError(path + ".pairs", "must be positive")
        if self.output_times < 2:
            raise ConfigError(path + ".output_times", "must be at least 2")


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    domain: DomainConfig = field(default_factory=DomainConfig)
    resolution: int = 128
    region: RegionConfig = field(default_factory=RegionConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    nonlinearity: NonlinearityConfig = field(default_factory=NonlinearityConfig)
    damping: DampingConfig = field(default_factory=DampingConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output_dir: str | None = None

    def validate(self, path=""):
        if self.resolution < 8:
            raise ConfigError("resolution", "must be at least 8")
        for name in ("domain", "region", "solver", "nonlinearity", "damping", "experiment"):
            getattr(self, name).validate(name)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _choice(value, options, path):
    if value not in options:
        raise ConfigError(path, f"{value!r} is not one of {list(options)}")


def _positive(value, path):
    if not value > 0:
        raise ConfigError(path, "must be positive")


def _vector(value, n, path):
    if not isinstance(value, (list, tuple)) or len(value) != n or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise ConfigError(path, f"must be a list of {n} numbers")


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str) and _EXP_FLOAT.fullmatch(value.strip()):
            return float(value)  # YAML 1.1 reads 1e6 as a string
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, data, path=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, f"unknown key (allowed: {sorted(names)})")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            where = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], where)
    return cls(**kwargs)


def load_config(source) -> ScenarioConfig:
    """Load and validate a scenario from a YAML path, YAML text or mapping."""
    if isinstance(source, dict):
        data = source
    else:
        text = Path(source).read_text() if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()) else source
        if isinstance(source, str) and "\n" not in source and not Path(source).exists() and source.endswith((".yaml", ".yml")):
            raise ConfigError("", f"config file not found: {source}")
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("", f"invalid YAML: {exc}") from None
    return _build(ScenarioConfig, data or {}).validate()


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
