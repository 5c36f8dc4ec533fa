"""Network presets and construction.

A network is an ordered stack of layers acting on the 784 input waveguides,
followed by a softmax over output powers scaled by a global gain beta.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import autograd as ag
from .autograd import Node, Parameter
from .layers import (ActivationSpec, ConvolutionLayer, FilterMask, FullyConnectedLayer,
                     ProjectionLayer)
from .optics import (QuadratureSpec, StarCouplerGeometry, TransferMatrix, coupling_matrix,
                     ideal_dft, ideal_pool)

INPUT_SIZE = 784
NUM_CLASSES = 10


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    """Declarative network description.

    ``layers`` is a list of dicts, one per layer:
      {"type": "conv", "size": M, "mask": mode, "activation": kind, "bias": kind, "fourier_out": bool}
      {"type": "fc", "size": M, "activation": kind, "bias": kind}
      {"type": "projection", "size": M}
    When ``preset`` is set the stack is generated and ``layers`` is ignored.
    """

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
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown network config key(s): {sorted(extra)}")
        return cls(**d)


def _conv(size, mask, act, fourier_out=True, bias="zero"):
    return {"type": "conv", "size": size, "mask": mask, "activation": act,
            "bias": bias, "fourier_out": fourier_out}


def _fc(size, act, bias="zero"):
    return {"type": "fc", "size": size, "activation": act, "bias": bias}


_PCNN_784_VARIANTS = {
    "PCNN-784": ("phase_only", "abs"),
    "PCNN-784-amp-phase": ("amp_phase", "abs"),
    "PCNN-784-amp": ("amp_only", "abs"),
    "PCNN-784-phase": ("phase_only", "abs"),
    "PCNN-784-phase-linear": ("phase_only", "linear"),
}

PRESETS = sorted(_PCNN_784_VARIANTS) + ["MLP-784", "D2NN-16", "PCNN-256-32", "PCNN-256-16",
                                        "PCNN-112-32", "PCNN-112-16"]


def preset_layers(cfg: NetworkConfig) -> list[dict]:
    """Expand a preset name into an explicit layer stack.

    Hidden fully-connected layers use ``cfg.fc_activation``; the output layer is
    linear since only its power is read out.
    """
    name = cfg.preset
    fc_act = cfg.fc_activation
    if name in _PCNN_784_VARIANTS:
        mask, act = _PCNN_784_VARIANTS[name]
        mask = cfg.mask_mode or mask
        act = cfg.conv_activation or act
        return [_conv(784, mask, act), _conv(392, mask, act), _conv(196, mask, act),
                _fc(56, fc_act), _fc(NUM_CLASSES, "linear")]
    if name == "MLP-784":
        return [_fc(16, fc_act), _fc(NUM_CLASSES, "linear")]
    if name == "D2NN-16":
        act = cfg.conv_activation or "abs"
        return ([_conv(784, "phase_only", act, fourier_out=False) for _ in range(16)]
                + [{"type": "projection", "size": NUM_CLASSES}])
    m = re.fullmatch(r"PCNN-(\d+)-(\d+)", name or "")
    if m:
        x, y = int(m.group(1)), int(m.group(2))
        if x % 2 or not 2 <= x <= INPUT_SIZE:
            raise ConfigError(f"{name}: first conv size must be even and <= {INPUT_SIZE}")
        mask = cfg.mask_mode or "phase_only"
        act = cfg.conv_activation or "linear"
        return [_conv(x, mask, act), _conv(x // 2, mask, act), _fc(y, fc_act),
                _fc(NUM_CLASSES, "linear")]
    raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)} or PCNN-x-y")


@lru_cache(maxsize=64)
def _physical(n_in: int, n_out: int, theta_deg: float, wavelength: float, slab_index: float,
              mode_width: float, points: int) -> TransferMatrix:
    geom = StarCouplerGeometry.from_edge_angle(n_in, math.radians(theta_deg), wavelength,
                                               slab_index, mode_width, outputs=n_out)
    return coupling_matrix(geom, QuadratureSpec(points=points))


def transfer_matrix(n_in: int, n_out: int, cfg: NetworkConfig) -> TransferMatrix:
    """Ideal or quadrature-computed star coupler from ``n_in`` to ``n_out`` ports."""
    if cfg.optics_mode == "ideal":
        return ideal_dft(n_in) if n_in == n_out else ideal_pool(n_in, n_out)
    if cfg.optics_mode == "physical":
        return _physical(n_in, n_out, float(cfg.theta_edge_deg), cfg.wavelength, cfg.slab_index,
                         cfg.mode_width, cfg.quadrature_points)
    raise ConfigError(f"optics_mode must be 'ideal' or 'physical', got {cfg.optics_mode!r}")


def _activation(spec: dict) -> ActivationSpec:
    kind = spec.get("activation", "linear")
    bias = spec.get("bias", "zero")
    try:
        return ActivationSpec(kind, bias, float(spec.get("bias_value", 0.01)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


class Network:
    def __init__(self, layers: list, config: NetworkConfig | None = None):
        self.layers = layers
        self.config = config
        self.scale = Parameter("scale", np.ones(1))
        self.calibrated = False
        for a, b in zip(layers, layers[1:]):
            if a.out_size != b.in_size:
                raise ConfigError(f"{a.name} outputs {a.out_size} but {b.name} takes {b.in_size}")
        if layers and layers[-1].out_size != NUM_CLASSES:
            raise ConfigError(f"last layer must output {NUM_CLASSES} values")

    @property
    def in_size(self) -> int:
        return self.layers[0].in_size

    def parameters(self, include_scale: bool = True) -> list[Parameter]:
        ps = [p for layer in self.layers for p in layer.parameters()]
        return ps + [self.scale] if include_scale else ps

    def parameter_count(self) -> int:
        """Trainable architecture parameters (masks, weights, biases); excludes the gain beta."""
        return sum(p.size for p in self.parameters(include_scale=False))

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def forward(self, x) -> Node:
        z = ag.constant(x)
        for layer in self.layers:
            z = layer.forward(z)
        return z

    def loss(self, x, labels) -> Node:
        return ag.power_softmax_xent(self.forward(x), self.scale, labels)

    def outputs(self, x: np.ndarray, chunk: int = 1000) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.concatenate([self.forward(x[i:i + chunk]).value
                               for i in range(0, len(x), chunk)]) if len(x) else np.zeros((0, NUM_CLASSES), complex)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return ag.predict_classes(self.outputs(x))

    def calibrate_scale(self, x: np.ndarray) -> float:
        """Set beta so the logits beta^2 |v|^2 have unit standard deviation on ``x``."""
        p = np.abs(self.outputs(x)) ** 2
        sd = float(np.std(p))
        self.scale.value[:] = 1.0 / math.sqrt(sd) if sd > 0 else 1.0
        self.calibrated = True
        return float(self.scale.value[0])

    def conv_layers(self) -> list:
        return [l for l in self.layers if l.kind in ("conv", "projection")]

    def fc_layers(self) -> list[FullyConnectedLayer]:
        return [l for l in self.layers if l.kind == "fc"]

    def biases(self) -> list[Parameter]:
        return [l.bias for l in self.layers if isinstance(getattr(l, "bias", None), Parameter)]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.trainable = flag

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(values)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, p in params.items():
            if values[name].shape != p.shape:
                raise ConfigError(f"{name}: checkpoint shape {values[name].shape} != {p.shape}")
            p.value[...] = values[name]
        self.calibrated = True


def build_network(config: NetworkConfig | str) -> Network:
    if isinstance(config, str):
        config = NetworkConfig(preset=config)
    stack = preset_layers(config) if config.preset else config.layers
    if not stack:
        raise ConfigError("empty layer stack")
    rng = np.random.default_rng(config.seed)
    layers = []
    n = INPUT_SIZE
    for i, spec in enumerate(stack):
        kind = spec.get("type")
        size = int(spec.get("size", 0))
        if size < 1:
            raise ConfigError(f"layer {i}: size must be positive")
        name = f"{kind}{i}"
        if kind == "conv":
            if size > n:
                raise ConfigError(f"layer {i}: conv cannot grow {n} -> {size}")
            f_in = transfer_matrix(n, size, config)
            f_out = transfer_matrix(size, size, config) if spec.get("fourier_out", True) else None
            mask = FilterMask(name, size, spec.get("mask", "phase_only"), rng)
            layers.append(ConvolutionLayer(name, f_in, mask, f_out, _activation(spec)))
        elif kind == "fc":
            layers.append(FullyConnectedLayer(name, n, size, _activation(spec), rng))
        elif kind == "projection":
            if size > n:
                raise ConfigError(f"layer {i}: projection cannot grow {n} -> {size}")
            layers.append(ProjectionLayer(name, transfer_matrix(n, size, config)))
        else:
            raise ConfigError(f"layer {i}: unknown layer type {kind!r}")
        n = size
    return Network(layers, config)


def analytic_parameter_count(config: NetworkConfig | str) -> int:
    """Count from the layer stack alone, without building matrices."""
    if isinstance(config, str):
        config = NetworkConfig(preset=config)
    stack = preset_layers(config) if config.preset else config.layers
    total, n = 0, INPUT_SIZE
    for spec in stack:
        size = int(spec["size"])
        if spec["type"] == "conv":
            total += size * (2 if spec.get("mask", "phase_only") == "amp_phase" else 1)
        elif spec["type"] == "fc":
            total += size * n
        bias = spec.get("bias", "zero")
        total += size if bias == "per_element" else 1 if bias == "shared_scalar" else 0
        n = size
    return total
