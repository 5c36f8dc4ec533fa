"""Imperfection studies: multiplicative noise on star couplers and masks, retraining."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from .data import Dataset
from .network import INPUT_SIZE, Network, NetworkConfig, build_network
from .optics import fidelity, ideal_dft, radius_for_edge_angle, transmission
from .train import TrainReport, TrainSpec, evaluate, train

NoiseKind = Literal["phase_only", "amplitude_only", "complex"]
NOISE_KINDS = ("phase_only", "amplitude_only", "complex")
TARGETS = ("star_matrices", "filter_masks")


@dataclass(frozen=True)
class NoiseSpec:
    """Each targeted element is multiplied by a_d * exp(i dphi).

    dphi ~ Normal(0, (2 pi sigma)^2); a_d = clip(1 - |d|, 0, 1) with d ~ Normal(0, sigma^2).
    """

    sigma: float
    targets: tuple[str, ...] = TARGETS
    kind: NoiseKind = "complex"
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.targets:
            raise ValueError("noise needs at least one target")
        bad = set(self.targets) - set(TARGETS)
        if bad:
            raise ValueError(f"unknown noise target(s) {sorted(bad)}")
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")


def noise_factors(shape, sigma: float, kind: str, rng: np.random.Generator) -> np.ndarray:
    # both normals are always drawn so a given seed yields the same draws for every kind
    d_amp = rng.standard_normal(shape)
    d_phase = rng.standard_normal(shape)
    amp = np.ones(shape) if kind == "phase_only" else np.clip(1 - np.abs(sigma * d_amp), 0.0, 1.0)
    phase = np.zeros(shape) if kind == "amplitude_only" else 2 * np.pi * sigma * d_phase
    return amp * np.exp(1j * phase)


def inject(network: Network, spec: NoiseSpec) -> Network:
    """Noisy copy of ``network``; the original is untouched.

    Fully-connected layers are never perturbed.
    """
    noisy = network.copy()
    rng = np.random.default_rng(spec.seed)
    for layer in noisy.conv_layers():
        if "star_matrices" in spec.targets:
            for attr in layer.optics():
                m = getattr(layer, attr)
                setattr(layer, attr, m * noise_factors(m.shape, spec.sigma, spec.kind, rng))
        if "filter_masks" in spec.targets and hasattr(layer, "mask"):
            f = noise_factors((layer.mask.size,), spec.sigma, spec.kind, rng)
            layer.mask.noise = f if layer.mask.noise is None else layer.mask.noise * f
    return noisy


def instance_seed(seed: int, kind: str, instance: int) -> np.random.SeedSequence:
    # same draws across sigma values so curves share their random realizations
    return np.random.SeedSequence([seed, NOISE_KINDS.index(kind), instance])


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    kind: str
    mean_acc: float
    std_acc: float
    instances: int
    seed: int


def _mean_std(acc: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(acc, dtype=float)
    if np.all(a == a[0]):
        # identical instances (e.g. sigma = 0) report the clean value exactly
        return float(a[0]), 0.0
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def degradation_sweep(network: Network, sigmas: Iterable[float], instances: int,
                      kinds: Iterable[str], dataset: Dataset, seed: int = 0,
                      targets: tuple[str, ...] = TARGETS) -> list[SweepRow]:
    if instances < 2:
        raise ValueError("degradation_sweep needs at least 2 instances")
    rows = []
    for sigma in sigmas:
        for kind in kinds:
            acc = []
            for i in range(instances):
                ss = instance_seed(seed, kind, i)
                s = int(ss.generate_state(1)[0])
                noisy = inject(network, NoiseSpec(float(sigma), targets, kind, s))
                acc.append(evaluate(noisy, dataset).accuracy)
            mean, std = _mean_std(acc)
            rows.append(SweepRow(float(sigma), kind, mean, std, instances, seed))
    return rows


RetrainScope = Literal["final_layer_only", "full"]


def set_retrain_scope(network: Network, scope: str) -> None:
    """Mark trainable parameters for retraining; star couplers are constants anyway."""
    network.set_trainable(False)
    if scope in ("final", "final_layer_only"):
        fcs = network.fc_layers()
        if not fcs:
            raise ValueError("final-layer retraining needs a fully-connected output layer")
        fcs[-1].weight.trainable = True
    elif scope == "full":
        for p in network.parameters(include_scale=False):
            p.trainable = True
    else:
        raise ValueError(f"scope must be 'final_layer_only' or 'full', got {scope!r}")


def retrain(noisy: Network, scope: str, train_set: Dataset, test_set: Dataset | None = None,
            spec: TrainSpec | None = None) -> TrainReport:
    """Retrain in place (batch 8, 10 epochs by default) with the noisy optics frozen."""
    spec = spec or TrainSpec(batch_size=8, epochs=10)
    set_retrain_scope(noisy, scope)
    try:
        return train(noisy, train_set, test_set, spec)
    finally:
        noisy.set_trainable(True)


@dataclass(frozen=True)
class BiasNoiseRow:
    delta_b: float
    mean_acc: float
    std_acc: float
    instances: int


def bias_noise_sweep(network: Network, deltas: Iterable[float], instances: int,
                     dataset: Dataset, seed: int = 0) -> list[BiasNoiseRow]:
    """Add Normal(0, delta_b^2) to every trainable activation bias and re-evaluate."""
    if not network.biases():
        raise ValueError("network has no trainable biases")
    rows = []
    for j, db in enumerate(deltas):
        acc = []
        for i in range(instances):
            rng = np.random.default_rng([seed, i])
            noisy = network.copy()
            for b in noisy.biases():
                b.value += db * rng.standard_normal(b.shape)
            acc.append(evaluate(noisy, dataset).accuracy)
        mean, std = _mean_std(acc)
        rows.append(BiasNoiseRow(float(db), mean, std, instances))
    return rows


@dataclass(frozen=True)
class FidelityAccuracyRow:
    theta_deg: float
    R_m: float
    F: float
    T: float
    accuracy: float


def fidelity_accuracy_sweep(config: NetworkConfig, thetas_deg: Iterable[float],
                            train_set: Dataset, test_set: Dataset,
                            spec: TrainSpec | None = None) -> list[FidelityAccuracyRow]:
    """Train the network with physical star couplers at each edge angle.

    F and T describe the square input-size coupler at that edge angle.
    """
    from .network import transfer_matrix

    rows = []
    for deg in thetas_deg:
        cfg = replace(config, optics_mode="physical", theta_edge_deg=float(deg))
        net = build_network(cfg)
        report = train(net, train_set, test_set, spec)
        square = transfer_matrix(INPUT_SIZE, INPUT_SIZE, cfg)
        slab = cfg.wavelength / cfg.slab_index
        rows.append(FidelityAccuracyRow(float(deg),
                                        radius_for_edge_angle(INPUT_SIZE, math.radians(deg), slab),
                                        fidelity(square, ideal_dft(INPUT_SIZE)),
                                        transmission(square),
                                        report.final_test_accuracy))
    return rows
