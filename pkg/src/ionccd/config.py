"""Experiment configuration, stored as TOML.

Grammar (every key optional, defaults reproduce the acceptance settings)::

    experiment = "ghz_tomography"     # or dd_sweep, analyze_dataset, servo_demo
    root_seed = 20130101
    output = "results"
    shots_per_setting = 629
    exact_data = false                # infinite-shot probabilities instead of counts
    bootstrap_resamples = 250
    spam = true                       # corrupt the simulated readout
    shelve_wait = 0.0027              # s between shelving and detection
    logic_dephasing = false
    dataset = "data.csv"              # analyze_dataset input

    [layout]
    n_segments = 32
    liz_index = 20
    pitch = 2e-4

    [noise]                           # NoiseParams fields
    gate2_error = 0.01
    [noise.dephasing]
    kind = "white"
    rate = 6.666666666666667
    [noise.b_drift]                   # carrier drift tracked by the servo
    slope_hz_per_cycle = 0.05
    walk_hz = 0.5

    [dd]
    storage_times = [0.0, 0.1, 0.5, 1.1]
    n_pi_list = [0, 15]               # 0 = free evolution
    mc_shots = 2000
    parity_shots = 200
    [dd.dephasing]                    # storage noise, same schema as noise.dephasing
    kind = "composite"
    parts = [{kind = "quasistatic", sigma = 17.68}, {kind = "white", rate = 0.0422}]

    [servo]
    cycles = 200
    shots = 100
    interrogation = 0.005
    gain = 0.5
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import tomli
import tomli_w

from .noise import (
    Composite,
    NoiseParams,
    QuasiStatic,
    WhiteNoise,
    model_from_dict,
    model_to_dict,
)
from .trap import TrapLayout

EXPERIMENTS = ("ghz_tomography", "dd_sweep", "analyze_dataset", "servo_demo")

# Free GHZ decay of about 20 ms from a per-shot constant offset, plus a weak
# white floor that decoupling cannot remove (about 0.69 contrast at 1.1 s).
STORAGE_SIGMA = math.sqrt(2) / (4 * 0.020)
STORAGE_WHITE = -math.log(0.69) / (8 * 1.1)


def default_storage_noise():
    return Composite((QuasiStatic(STORAGE_SIGMA), WhiteNoise(STORAGE_WHITE)))


@dataclass
class DDConfig:
    storage_times: list = field(default_factory=lambda: [0.0, 0.02, 0.1, 0.3, 0.5, 0.8, 1.1])
    n_pi_list: list = field(default_factory=lambda: [0, 15])
    mc_shots: int = 2000
    parity_shots: int = 200
    dephasing: object = field(default_factory=default_storage_noise)

    def validate(self):
        if not self.storage_times or not self.n_pi_list:
            raise ValueError("dd sweep needs non-empty storage_times and n_pi_list")
        for n in self.n_pi_list:
            if n != 0 and (n < 0 or n % 2 == 0):
                raise ValueError(f"n_pi values must be odd (or 0 for free evolution), got {n}")
        if any(t < 0 for t in self.storage_times):
            raise ValueError("storage times must be >= 0")
        if self.mc_shots < 1 or self.parity_shots < 1:
            raise ValueError("mc_shots and parity_shots must be >= 1")


@dataclass
class ServoConfig:
    cycles: int = 200
    shots: int = 100
    interrogation: float = 5e-3
    gain: float = 0.5


@dataclass
class ExperimentConfig:
    experiment: str = "ghz_tomography"
    root_seed: int = 20130101
    output: str = "results"
    shots_per_setting: int = 629
    exact_data: bool = False
    bootstrap_resamples: int = 250
    spam: bool = True
    shelve_wait: float = 2.7e-3
    logic_dephasing: bool = False
    dataset: Optional[str] = None
    layout: TrapLayout = field(default_factory=TrapLayout)
    noise: NoiseParams = field(default_factory=NoiseParams)
    dd: DDConfig = field(default_factory=DDConfig)
    servo: ServoConfig = field(default_factory=ServoConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.shots_per_setting < 1:
            raise ValueError("shots_per_setting must be >= 1")
        if self.bootstrap_resamples < 100:
            raise ValueError("bootstrap_resamples must be >= 100")
        if self.experiment == "dd_sweep":
            self.dd.validate()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "layout":
                v = asdict(v)
            elif f.name == "noise":
                v = v.to_dict()
            elif f.name == "dd":
                v = {**asdict(v), "dephasing": model_to_dict(v.dephasing)}
            elif f.name == "servo":
                v = asdict(v)
            if v is not None:
                out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        if "layout" in d:
            d["layout"] = TrapLayout(**d["layout"])
        if "noise" in d:
            d["noise"] = NoiseParams.from_dict(d["noise"])
        if "dd" in d:
            dd = dict(d["dd"])
            if "dephasing" in dd:
                dd["dephasing"] = model_from_dict(dd["dephasing"])
            d["dd"] = DDConfig(**dd)
        if "servo" in d:
            d["servo"] = ServoConfig(**d["servo"])
        return cls(**d)


def _strip_inf(obj):
    """TOML has no null; infinite lifetimes are written as the string "inf"."""
    if isinstance(obj, dict):
        return {k: _strip_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_strip_inf(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _restore_inf(obj):
    if isinstance(obj, dict):
        return {k: _restore_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_inf(v) for v in obj]
    if obj in ("inf", "-inf"):
        return float(obj)
    return obj


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(_strip_inf(cfg.to_dict()))


def loads_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.from_dict(_restore_inf(tomli.loads(text)))


def load_config(path: Union[str, Path, None]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return loads_config(Path(path).read_text())


def save_config(cfg: ExperimentConfig, path: Union[str, Path]):
    Path(path).write_text(dumps_config(cfg))
