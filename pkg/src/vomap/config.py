"""Run configuration shared by the command-line subcommands."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .diffraction import VoglerConfig
from .geometry import GridSpec
from .io import FormatError
from .propagation import PathLossParams, SamplingConfig
from .reconstruction import FitConfig
from .scene import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RelaySettings:
    z_min: float = 10.0
    z_max: float = 150.0
    step_v: Optional[float] = None
    step_h: Optional[float] = None
    angle_step_deg: float = 5.0
    fixed_altitude: float = 50.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    grid: GridSpec = GridSpec(64, 64, 10.0)
    scene: SceneConfig = SceneConfig()
    path_loss: PathLossParams = PathLossParams(30.0, 22.0)
    n_samples: int = 50_000
    sampling: SamplingConfig = SamplingConfig()
    noise_sigma: float = 3.0
    eccentricity: float = 0.8
    vogler: VoglerConfig = VoglerConfig()
    fit: FitConfig = FitConfig()
    relay: RelaySettings = RelaySettings()
    paths: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0 < self.eccentricity < 1:
            raise ConfigError("eccentricity must lie in (0, 1)")

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"]["origin"] = list(self.grid.origin)
        for key, sub in (("scene", ("height_range", "block_size")),
                         ("sampling", ("tx_altitude",)), ("fit", ("feature_shape",))):
            for k in sub:
                d[key][k] = list(d[key][k])
        return d


_SECTIONS = {"grid": GridSpec, "scene": SceneConfig, "path_loss": PathLossParams,
             "sampling": SamplingConfig, "vogler": VoglerConfig, "fit": FitConfig,
             "relay": RelaySettings}
_TUPLES = {("grid", "origin"), ("scene", "height_range"), ("scene", "block_size"),
           ("sampling", "tx_altitude"), ("fit", "feature_shape")}


def _build(name: str, cls, values: Any):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    kw = {k: (tuple(v) if (name, k) in _TUPLES else v) for k, v in values.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r}: {exc}") from None


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)} | {"wavelength"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw: Dict[str, Any] = {}
    for k, v in d.items():
        if k in _SECTIONS:
            kw[k] = _build(k, _SECTIONS[k], v)
        elif k != "wavelength":
            kw[k] = v
    if "wavelength" in d:
        vog = kw.get("vogler", VoglerConfig())
        kw["vogler"] = _build("vogler", VoglerConfig,
                              {**dataclasses.asdict(vog), "wavelength": d["wavelength"]})
    try:
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return config_from_dict(d)
