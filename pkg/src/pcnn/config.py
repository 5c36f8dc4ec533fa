"""Experiment configuration shared by all CLI subcommands.

The config file is JSON with one object per section.  Unknown keys anywhere
are rejected.  Precedence is command-line flags > file > defaults.

    {
      "seed": 0,
      "out": "runs/demo",
      "data":       {"root": null, "dataset": "mnist"},
      "optics":     {"wavelength": 1.55e-6, "slab_index": 2.85, "mode_width": 5e-7,
                     "radius": 3.409e-4, "theta_edge_deg": null, "inputs": 21, "outputs": null,
                     "paraxial_limit_deg": 15.0, "strict": false},
      "quadrature": {"points": 64, "panels": 1, "window_widths": 5.0, "tol": 1e-8},
      "sweep":      {"n": 64, "theta_min_deg": 5.0, "theta_max_deg": 15.0, "steps": 11,
                     "thetas_deg": [5.0, 10.0, 15.0]},
      "network":    {"preset": "PCNN-112-16", "optics_mode": "ideal", ..., "checkpoint": null},
      "train":      {"batch_size": 8, "epochs": 80, "lr": 0.001, "train_subset": null, ...},
      "noise":      {"sigmas": [...], "kinds": [...], "instances": 20, "targets": [...]},
      "retrain":    {"scope": "full", "sigma": 0.05, "kind": "phase_only", "epochs": 10,
                     "batch_size": 8},
      "footprint":  {"n": 256, "mzi_width": 1e-4, "mzi_height": 6e-5,
                     "normalized_radius": 1e-5, "margin": 0.0},
      "gradcheck":  {"h": 1e-6, "tolerance": 1e-4, "sample": 0}
    }

The ``network`` section takes every NetworkConfig field except ``seed``, and
``train`` every TrainSpec field except ``seed``; both seeds come from the
top-level ``seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .network import ConfigError, NetworkConfig
from .noise import NOISE_KINDS, TARGETS
from .train import TrainSpec


@dataclass
class DataSection:
    root: str | None = None
    dataset: str = "mnist"


@dataclass
class OpticsSection:
    wavelength: float | None = None
    slab_index: float | None = None
    mode_width: float | None = None
    radius: float | None = None
    theta_edge_deg: float | None = None
    inputs: int | None = None
    outputs: int | None = None
    paraxial_limit_deg: float = 15.0
    strict: bool = False


@dataclass
class QuadratureSection:
    points: int = 64
    panels: int = 1
    window_widths: float = 5.0
    tol: float = 1e-8


@dataclass
class SweepSection:
    n: int = 64
    theta_min_deg: float = 5.0
    theta_max_deg: float = 15.0
    steps: int = 11
    thetas_deg: list[float] = field(default_factory=lambda: [5.0, 10.0, 15.0])


@dataclass
class NetworkSection:
    preset: str | None = "PCNN-112-16"
    layers: list[dict] = field(default_factory=list)
    mask_mode: str | None = None
    conv_activation: str | None = None
    fc_activation: str = "abs"
    optics_mode: str = "ideal"
    theta_edge_deg: float = 10.0
    wavelength: float = 1550e-9
    slab_index: float = 2.85
    mode_width: float = 500e-9
    quadrature_points: int = 64
    checkpoint: str | None = None


@dataclass
class TrainSection:
    batch_size: int = 8
    epochs: int = 80
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_subset: int | None = None
    test_subset: int | None = None
    eval_train: bool = True


@dataclass
class NoiseSection:
    sigmas: list[float] = field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05, 0.1, 0.2])
    kinds: list[str] = field(default_factory=lambda: list(NOISE_KINDS))
    instances: int = 20
    targets: list[str] = field(default_factory=lambda: list(TARGETS))


@dataclass
class RetrainSection:
    scope: str = "full"
    sigma: float = 0.05
    kind: str = "phase_only"
    epochs: int = 10
    batch_size: int = 8


@dataclass
class FootprintSection:
    n: int = 256
    mzi_width: float = 100e-6
    mzi_height: float = 60e-6
    normalized_radius: float = 10e-6
    margin: float = 0.0


@dataclass
class GradcheckSection:
    h: float = 1e-6
    tolerance: float = 1e-4
    sample: int = 0


SECTIONS = {
    "data": DataSection, "optics": OpticsSection, "quadrature": QuadratureSection,
    "sweep": SweepSection, "network": NetworkSection, "train": TrainSection,
    "noise": NoiseSection, "retrain": RetrainSection, "footprint": FootprintSection,
    "gradcheck": GradcheckSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str | None = None
    data: DataSection = field(default_factory=DataSection)
    optics: OpticsSection = field(default_factory=OpticsSection)
    quadrature: QuadratureSection = field(default_factory=QuadratureSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    retrain: RetrainSection = field(default_factory=RetrainSection)
    footprint: FootprintSection = field(default_factory=FootprintSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        extra = set(raw) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown config key(s): {sorted(extra)}")
        kw = {}
        for name, value in raw.items():
            if name in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {name!r} must be an object")
                sec = SECTIONS[name]
                bad = set(value) - {f.name for f in fields(sec)}
                if bad:
                    raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(bad)}")
                kw[name] = sec(**value)
            else:
                kw[name] = value
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def network_config(self) -> NetworkConfig:
        d = asdict(self.network)
        d.pop("checkpoint")
        return NetworkConfig(seed=self.seed, **d)

    def train_spec(self) -> TrainSpec:
        return TrainSpec(seed=self.seed, **asdict(self.train))

    def require(self, section: str, *keys: str) -> None:
        sec = getattr(self, section)
        for k in keys:
            if getattr(sec, k) is None:
                raise ConfigError(f"missing required key '{section}.{k}'")

    def apply_desk_scale(self) -> None:
        """Small subsets and short runs so a full experiment finishes in minutes."""
        self.train.train_subset = self.train.train_subset or 10000
        self.train.test_subset = self.train.test_subset or 2000
        self.train.epochs = min(self.train.epochs, 10)
        self.noise.instances = min(self.noise.instances, 5)
