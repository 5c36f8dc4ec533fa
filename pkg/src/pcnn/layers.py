"""Photonic network layers built from transfer matrices and autograd primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import autograd as ag
from .autograd import Node, Parameter
from .optics import TransferMatrix

ActivationKind = Literal["modrelu", "abs", "linear"]
BiasKind = Literal["per_element", "shared_scalar", "fixed", "zero"]


@dataclass
class ActivationSpec:
    """Activation choices covering the modReLU variants plus abs and linear.

    ``modrelu`` keeps the phase and uses ``bias``; ``abs`` drops the phase and
    may also carry a bias (ReLU(|z| + b)); ``linear`` is modReLU with b = 0.
    """

    kind: ActivationKind = "linear"
    bias: BiasKind = "zero"
    value: float = 0.01

    def __post_init__(self):
        if self.kind not in ("modrelu", "abs", "linear"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.bias not in ("per_element", "shared_scalar", "fixed", "zero"):
            raise ValueError(f"unknown bias kind {self.bias!r}")
        if self.kind == "linear" and self.bias != "zero":
            raise ValueError("linear activation takes no bias")

    def make_bias(self, name: str, size: int) -> Parameter | float | None:
        if self.bias == "per_element":
            return Parameter(name, np.zeros(size))
        if self.bias == "shared_scalar":
            return Parameter(name, np.zeros(1))
        if self.bias == "fixed":
            return float(self.value)
        return None

    def apply(self, v: Node, bias) -> Node:
        if self.kind == "linear":
            return v
        return ag.modrelu(v, bias, keep_phase=self.kind == "modrelu")


class FilterMask:
    """Trainable diagonal Fourier-plane mask a_m exp(i 2 pi theta_m)."""

    def __init__(self, name: str, size: int, mode: ag.MaskMode = "phase_only",
                 rng: np.random.Generator | None = None):
        if mode not in ("amp_phase", "amp_only", "phase_only"):
            raise ValueError(f"unknown mask mode {mode!r}")
        rng = rng or np.random.default_rng(0)
        self.size = size
        self.mode = mode
        self.alpha = (Parameter(f"{name}.alpha", rng.uniform(0.5, 1.0, size))
                      if mode != "phase_only" else None)
        self.theta = (Parameter(f"{name}.theta", rng.uniform(0.0, 1.0, size))
                      if mode != "amp_only" else None)
        self.noise: np.ndarray | None = None

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.alpha, self.theta) if p is not None]

    def apply(self, v: Node) -> Node:
        return ag.diagonal_mask(self.alpha, self.theta, v, self.mode, self.noise)

    def diagonal(self) -> np.ndarray:
        amp, phase, _ = ag.mask_values(self.alpha, self.theta, self.mode, self.size)
        d = amp * np.exp(1j * phase)
        return d if self.noise is None else d * self.noise


def _entries(m) -> np.ndarray:
    return m.entries if isinstance(m, TransferMatrix) else np.asarray(m)


class ConvolutionLayer:
    """u -> G(F_out . A . F_in . u).  ``f_out=None`` leaves the output in the Fourier plane."""

    kind = "conv"

    def __init__(self, name: str, f_in, mask: FilterMask, f_out=None,
                 activation: ActivationSpec | None = None):
        self.name = name
        self.f_in = np.array(_entries(f_in))
        self.f_out = None if f_out is None else np.array(_entries(f_out))
        m = self.f_in.shape[0]
        if mask.size != m:
            raise ValueError(f"{name}: mask length {mask.size} != F_in rows {m}")
        if self.f_out is not None and self.f_out.shape != (m, m):
            raise ValueError(f"{name}: F_out must be {m}x{m}, got {self.f_out.shape}")
        self.mask = mask
        self.activation = activation or ActivationSpec()
        self.bias = self.activation.make_bias(f"{name}.bias", m)

    @property
    def in_size(self) -> int:
        return self.f_in.shape[1]

    @property
    def out_size(self) -> int:
        return self.f_in.shape[0]

    def optics(self) -> list[str]:
        return ["f_in"] + (["f_out"] if self.f_out is not None else [])

    def parameters(self) -> list[Parameter]:
        ps = self.mask.parameters()
        if isinstance(self.bias, Parameter):
            ps.append(self.bias)
        return ps

    def forward(self, u: Node) -> Node:
        return conv_forward(self, u)


def conv_forward(layer: ConvolutionLayer, u: Node) -> Node:
    if u.shape[-1] != layer.in_size:
        raise ValueError(f"{layer.name}: input length {u.shape[-1]} != {layer.in_size}")
    z = ag.matvec(layer.f_in, u)
    z = layer.mask.apply(z)
    if layer.f_out is not None:
        z = ag.matvec(layer.f_out, z)
    return layer.activation.apply(z, layer.bias)


def pool(u: Node, f_pool) -> Node:
    """Spectral truncation through an M x N transfer matrix with M < N."""
    f = _entries(f_pool)
    if f.shape[0] >= f.shape[1]:
        raise ValueError(f"pooling needs M < N, got {f.shape}")
    return ag.matvec(f, u)


class ProjectionLayer:
    """A fixed optical transform with no trainable parameters (e.g. readout coupler)."""

    kind = "projection"

    def __init__(self, name: str, f):
        self.name = name
        self.f_in = np.array(_entries(f))
        self.f_out = None

    @property
    def in_size(self) -> int:
        return self.f_in.shape[1]

    @property
    def out_size(self) -> int:
        return self.f_in.shape[0]

    def optics(self) -> list[str]:
        return ["f_in"]

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, u: Node) -> Node:
        return ag.matvec(self.f_in, u)


class FullyConnectedLayer:
    kind = "fc"

    def __init__(self, name: str, in_size: int, out_size: int,
                 activation: ActivationSpec | None = None, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.name = name
        limit = np.sqrt(6.0 / (in_size + out_size))
        self.weight = Parameter(f"{name}.W", rng.uniform(-limit, limit, (out_size, in_size)))
        self.activation = activation or ActivationSpec()
        self.bias = self.activation.make_bias(f"{name}.bias", out_size)

    @property
    def in_size(self) -> int:
        return self.weight.shape[1]

    @property
    def out_size(self) -> int:
        return self.weight.shape[0]

    def optics(self) -> list[str]:
        return []

    def parameters(self) -> list[Parameter]:
        ps = [self.weight]
        if isinstance(self.bias, Parameter):
            ps.append(self.bias)
        return ps

    def forward(self, u: Node) -> Node:
        return fc_forward(self, u)


def fc_forward(layer: FullyConnectedLayer, u: Node) -> Node:
    if u.shape[-1] != layer.in_size:
        raise ValueError(f"{layer.name}: input length {u.shape[-1]} != {layer.in_size}")
    return layer.activation.apply(ag.real_matvec(layer.weight, u), layer.bias)


@dataclass
class SvdFactorization:
    u: np.ndarray
    singular_values: np.ndarray
    vh: np.ndarray
    gain: float

    @property
    def scaled_singular_values(self) -> np.ndarray:
        return self.singular_values / self.gain

    def scaled_matrix(self) -> np.ndarray:
        """U Sigma' V^H with Sigma' = Sigma / gain, i.e. W / gain."""
        k = len(self.singular_values)
        return (self.u[:, :k] * self.scaled_singular_values) @ self.vh[:k, :]

    def reconstruct(self) -> np.ndarray:
        return self.gain * self.scaled_matrix()


def svd_check(w: np.ndarray, probes: np.ndarray | None = None, tol: float = 1e-9) -> SvdFactorization:
    """Factor W = gain * U Sigma' V^H with singular values of Sigma' <= 1.

    Checks unitarity, reconstruction, and that argmax |W' u|^2 equals argmax |W u|^2
    for each row of ``probes``; raises AssertionError on any failure.
    """
    w = np.asarray(w, dtype=float)
    u, s, vh = np.linalg.svd(w)
    gain = max(1.0, float(s[0])) if s.size else 1.0
    fac = SvdFactorization(u, s, vh, gain)
    eye_u = np.eye(u.shape[0])
    eye_v = np.eye(vh.shape[0])
    assert np.max(np.abs(u.conj().T @ u - eye_u)) < tol, "U not unitary"
    assert np.max(np.abs(vh @ vh.conj().T - eye_v)) < tol, "V not unitary"
    assert np.max(np.abs(fac.reconstruct() - w), initial=0.0) < tol, "reconstruction failed"
    assert np.all(fac.scaled_singular_values <= 1 + tol)
    if probes is not None:
        scaled = fac.scaled_matrix()
        a = np.argmax(np.abs(probes @ w.T) ** 2, axis=-1)
        b = np.argmax(np.abs(probes @ scaled.T) ** 2, axis=-1)
        assert np.array_equal(a, b), "scaled weights change the prediction"
    return fac
