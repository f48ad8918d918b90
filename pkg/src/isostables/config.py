"""Experiment configuration: schema, defaults, YAML round trip and stage keys.

A configuration is a YAML mapping with the sections ``model``, ``orbit``,
``chart``, ``spectrum``, ``sweep``, ``levels``, ``simulate``, ``tune`` and
``oracle`` plus the scalars ``name``, ``output_dir`` and ``seed``.  All state
indices in a configuration are 1-based.  Fields left as ``null`` take the
per-model defaults of :data:`MODEL_DEFAULTS` when the configuration is
resolved; serialization writes back exactly what was parsed.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    name: str = "vdp"
    file: str | None = None
    params: dict = field(default_factory=dict)


@dataclass
class OrbitConfig:
    method: str | None = None           # harmonic_balance | integrate
    N: int | None = None
    schedule: list | None = None
    gauge: float = 0.0
    x0: list | None = None
    tol: float = 1e-13
    samples: int | None = None


@dataclass
class ChartConfig:
    plane: list | None = None           # two 1-based coordinate indices
    N: int | None = None                # truncation of the chart orbit
    scale: list | None = None
    table_size: int = 4096


@dataclass
class SpectrumConfig:
    method: str = "DOP853"
    rtol: float = 1e-12
    atol: float = 1e-14
    segments: int = 32


@dataclass
class SweepConfig:
    axes: list | None = None            # [[min, max, count], ...]
    coords: list | None = None          # 1-based state coordinates of the axes
    fixed: list | None = None           # values of the other coordinates
    origin: list | None = None          # affine box: origin + sum u_k basis_k
    basis: list | None = None           # list of basis vectors (one per axis)
    quantities: list = field(default_factory=lambda: ["phase", "amplitude"])
    laplace_T: float | None = None
    laplace_count: int = 64
    laplace_horizons: list | None = None
    laplace_dt: float | None = None
    fourier_observable: int = 1
    fourier_t_skip: float | None = None
    fourier_horizon: float | None = None
    fourier_dt: float | None = None
    integrator: str = "rk8"
    step: float = 0.02
    chunk: int = 1024


@dataclass
class LevelSpec:
    field: str = "amplitude"
    spacing: str = "linear"             # linear | log | values
    start: float = 0.0
    step: float = 0.1                   # additive (linear) or multiplicative (log)
    count: int = 10
    signed: bool = False                # log: add the negated levels
    values: list | None = None

    def level_values(self) -> list:
        if self.spacing == "values":
            return [float(v) for v in (self.values or [])]
        if self.spacing == "linear":
            return [self.start + k * self.step for k in range(self.count)]
        if self.spacing == "log":
            pos = [self.start * self.step ** k for k in range(self.count)]
            return sorted([-v for v in pos] + pos) if self.signed else pos
        raise ConfigError(f"unknown level spacing {self.spacing!r}")


@dataclass
class SimulateConfig:
    kind: str | None = None             # forced | pulses
    amplitude: float = 0.8
    freq: float = 1.5
    component: int = 1
    x0: list | None = None
    t_end: float | None = None
    periods: float = 3.0
    dt: float = 0.01
    eps: float = 1.0
    Dt: float = 4.0
    n_pulses: int = 10
    direction: list | None = None
    theta_count: int = 256
    r_min: float = -3.0
    r_max: float = 1.5
    r_count: int = 181
    plane_normal: list | None = None
    plane_offset: float = 0.0
    classic: bool = True


@dataclass
class TuneConfig:
    probe: list | None = None
    candidates: list | None = None
    plateau_tol: float = 1e-3


@dataclass
class OracleConfig:
    enabled: bool = False
    r_min: float = 0.3
    r_max: float = 2.0


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: ModelConfig = field(default_factory=ModelConfig)
    orbit: OrbitConfig = field(default_factory=OrbitConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    sweep: SweepConfig | None = None
    levels: list = field(default_factory=list)          # list of LevelSpec
    simulate: SimulateConfig | None = None
    tune: TuneConfig | None = None
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output_dir: str = "out"
    seed: int = 0


# Per-model defaults of the example experiments.
MODEL_DEFAULTS = {
    "vdp": {
        "orbit": {"method": "harmonic_balance", "N": 40, "x0": [1.0, 0.0]},
        "chart": {"plane": [1, 2], "N": 80},
        "sweep": {"axes": [[-3.0, 3.0, 100], [-3.0, 3.0, 100]], "laplace_T": 20.0,
                  "laplace_dt": 0.1},
        "simulate": {"x0": [0.0, 1.0]},
    },
    "vdp3d": {
        "orbit": {"method": "harmonic_balance", "N": 20, "x0": [1.0, 0.0, 1.0]},
        "chart": {"plane": [1, 2], "N": 60},
        "sweep": {"axes": [[-3.5, 3.5, 80], [-3.5, 3.5, 80], [-2.5, 2.5, 80]],
                  "laplace_T": 25.0, "laplace_dt": 0.1},
        "simulate": {"plane_normal": [4.0, -2.0, -5.0], "direction": [1.0, 0.0, 0.0]},
    },
    "hodgkin_huxley": {
        "orbit": {"method": "integrate", "N": 150, "x0": [0.0, 0.05, 0.6, 0.32]},
        "chart": {"plane": [2, 4], "N": 300},
        "sweep": {"axes": [[-20.0, 110.0, 30], [0.0, 1.0, 30], [0.0, 0.7, 30]],
                  "origin": [0.0, 0.0, 0.0, 0.8],
                  "basis": [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]],
                  "laplace_T": 80.0, "laplace_dt": 1.0},
    },
    "radial_hopf": {
        "orbit": {"method": "harmonic_balance", "N": 3, "x0": [1.0, 0.0]},
        "chart": {"plane": [1, 2], "N": 3},
        "sweep": {"axes": [[-2.0, 2.0, 60], [-2.0, 2.0, 60]], "laplace_T": 8.0,
                  "laplace_dt": 0.1},
        "simulate": {"x0": [1.5, 0.0]},
    },
}

_GENERIC = {
    "orbit": {"method": "harmonic_balance", "N": 20},
    "chart": {"plane": [1, 2]},
    "sweep": {"laplace_T": 20.0, "laplace_dt": 0.1},
    "simulate": {},
}


# --- dict <-> dataclass ------------------------------------------------------------


_SECTION_TYPES = {
    "model": ModelConfig, "orbit": OrbitConfig, "chart": ChartConfig,
    "spectrum": SpectrumConfig, "sweep": SweepConfig, "simulate": SimulateConfig,
    "tune": TuneConfig, "oracle": OracleConfig,
}


def _check_scalar(name, value, hint):
    if value is None:
        return None
    text = hint.__name__ if isinstance(hint, type) else str(hint)
    if "bool" in text and not isinstance(value, bool):
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if text.startswith("int") and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if text.startswith("float"):
        # YAML 1.1 reads exponent literals without a dot ("1e-13") as strings
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{name}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if text.startswith("str") and not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    if text.startswith("list") and not isinstance(value, list):
        raise ConfigError(f"{name}: expected a list, got {value!r}")
    if text.startswith("dict") and not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping, got {value!r}")
    return value


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(unknown))}")
    kwargs = {k: _check_scalar(f"{where}.{k}", v, hints[k]) for k, v in data.items()}
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    data = dict(data)
    version = data.pop("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported configuration version {version!r}")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(sorted(unknown))}")
    kw: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if value is None and key in ("sweep", "simulate", "tune"):
                kw[key] = None
            else:
                kw[key] = _build(_SECTION_TYPES[key], value, key)
        elif key == "levels":
            if not isinstance(value or [], list):
                raise ConfigError("levels: expected a list")
            kw[key] = [_build(LevelSpec, v, f"levels[{i}]") for i, v in enumerate(value or [])]
        elif key == "seed":
            kw[key] = _check_scalar("seed", value, int)
        else:
            kw[key] = _check_scalar(key, value, str)
    cfg = ExperimentConfig(**kw)
    validate(cfg)
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {"version": SCHEMA_VERSION}
    out.update(dataclasses.asdict(cfg))
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return from_dict(data or {})


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return loads(text)


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))


# --- validation and defaults ---------------------------------------------------------


def validate(cfg: ExperimentConfig) -> None:
    if cfg.orbit.method not in (None, "harmonic_balance", "integrate"):
        raise ConfigError(f"orbit.method must be harmonic_balance or integrate, got {cfg.orbit.method!r}")
    if cfg.chart.plane is not None and len(cfg.chart.plane) != 2:
        raise ConfigError("chart.plane needs two coordinate indices")
    if cfg.sweep is not None:
        s = cfg.sweep
        if s.axes is not None:
            if not (2 <= len(s.axes) <= 3) or any(len(a) != 3 for a in s.axes):
                raise ConfigError("sweep.axes must list 2 or 3 [min, max, count] triples")
        if (s.origin is None) != (s.basis is None):
            raise ConfigError("sweep.origin and sweep.basis go together")
        if s.integrator not in ("rk4", "rk8"):
            raise ConfigError("sweep.integrator must be rk4 or rk8")
    if cfg.simulate is not None and cfg.simulate.kind not in ("forced", "pulses"):
        raise ConfigError("simulate.kind must be forced or pulses")
    for spec in cfg.levels:
        if spec.spacing not in ("linear", "log", "values"):
            raise ConfigError(f"unknown level spacing {spec.spacing!r}")
        if spec.field not in ("phase", "amplitude"):
            raise ConfigError("level sets are extracted from phase or amplitude fields")


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Copy of ``cfg`` with every ``null`` field replaced by its default."""
    out = copy.deepcopy(cfg)
    defaults = MODEL_DEFAULTS.get(out.model.name, _GENERIC)
    for section in ("orbit", "chart", "sweep", "simulate"):
        obj = getattr(out, section)
        if obj is None:
            continue
        for key, val in defaults.get(section, {}).items():
            if getattr(obj, key) is None:
                if section == "sweep" and key in ("origin", "basis") and obj.coords is not None:
                    continue
                setattr(obj, key, copy.deepcopy(val))
    if out.orbit.N is None:
        out.orbit.N = 20
    if out.orbit.method is None:
        out.orbit.method = "harmonic_balance"
    if out.chart.N is None:
        out.chart.N = out.orbit.N
    if out.sweep is not None and out.sweep.axes is None:
        raise ConfigError(f"sweep.axes has no default for model {out.model.name!r}")
    return out


# --- stage keys -------------------------------------------------------------------------

STAGES = ("orbit", "spectrum", "chart", "fields", "levels", "simulate", "tune", "oracle")

_STAGE_INPUTS = {
    "orbit": ("model", "orbit"),
    "spectrum": ("model", "orbit", "spectrum"),
    "chart": ("model", "orbit", "chart"),
    "fields": ("model", "orbit", "spectrum", "chart", "sweep"),
    "levels": ("model", "orbit", "spectrum", "chart", "sweep", "levels"),
    "simulate": ("model", "orbit", "spectrum", "chart", "sweep", "simulate"),
    "tune": ("model", "orbit", "spectrum", "chart", "tune"),
    "oracle": ("model", "orbit", "spectrum", "chart", "sweep", "oracle"),
}


def _canonical(obj) -> str:
    def norm(v):
        if isinstance(v, float):
            return repr(v) if math.isfinite(v) else str(v)
        if isinstance(v, dict):
            return {k: norm(x) for k, x in sorted(v.items())}
        if isinstance(v, (list, tuple)):
            return [norm(x) for x in v]
        return v
    return json.dumps(norm(obj), sort_keys=True, separators=(",", ":"))


def stage_keys(cfg: ExperimentConfig, extra: str = "") -> dict:
    """Content hash of the resolved upstream configuration of every stage."""
    res = to_dict(resolve(cfg))
    model_file = res["model"].get("file")
    file_digest = ""
    if model_file:
        try:
            file_digest = hashlib.sha256(Path(model_file).read_bytes()).hexdigest()
        except OSError:
            file_digest = "missing"
    keys = {}
    for stage, inputs in _STAGE_INPUTS.items():
        payload = {k: res[k] for k in inputs}
        payload["_model_file"] = file_digest
        payload["_extra"] = extra
        keys[stage] = hashlib.sha256(_canonical(payload).encode()).hexdigest()[:16]
    return keys


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


__all__ = [
    "ConfigError", "ExperimentConfig", "ModelConfig", "OrbitConfig", "ChartConfig",
    "SpectrumConfig", "SweepConfig", "LevelSpec", "SimulateConfig", "TuneConfig",
    "OracleConfig", "MODEL_DEFAULTS", "STAGES", "from_dict", "to_dict", "dumps", "loads",
    "load", "save", "resolve", "validate", "stage_keys", "file_sha256",
]
