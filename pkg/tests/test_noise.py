import math

import numpy as np
import pytest
from scipy import stats

from pcnn.data import Dataset
from pcnn.network import NetworkConfig, build_network
from pcnn.noise import (NoiseSpec, bias_noise_sweep, degradation_sweep, fidelity_accuracy_sweep,
                        inject, noise_factors, retrain, set_retrain_scope)
from pcnn.train import TrainSpec, evaluate, train

from conftest import needs_mnist

DRAWS = 100_000


def synthetic(n, seed=0):
    rng = np.random.default_rng(seed)
    protos = rng.uniform(size=(10, 784)) ** 4
    y = np.arange(n) % 10
    return Dataset(np.clip(protos[y] + 0.1 * rng.normal(size=(n, 784)), 0, 1), y)


@pytest.fixture(scope="module")
def small_trained():
    data = synthetic(200)
    net = build_network("PCNN-32-8")
    train(net, data, spec=TrainSpec(epochs=3))
    return net, data


# --- noise model statistics -----------------------------------------------------

@pytest.mark.parametrize("sigma", [0.01, 0.05, 0.1])
def test_phase_std(sigma):
    f = noise_factors(DRAWS, sigma, "phase_only", np.random.default_rng(0))
    np.testing.assert_allclose(np.abs(f), 1.0, rtol=1e-15)
    assert np.std(np.angle(f)) == pytest.approx(2 * np.pi * sigma, rel=0.02)
    assert stats.kstest(np.angle(f), "norm", args=(0, 2 * np.pi * sigma)).pvalue > 0.01


@pytest.mark.parametrize("sigma", [0.01, 0.05, 0.1])
def test_amplitude_mean(sigma):
    f = noise_factors(DRAWS, sigma, "amplitude_only", np.random.default_rng(1))
    assert np.all(f.imag == 0)
    a = f.real
    assert a.mean() == pytest.approx(1 - sigma * math.sqrt(2 / math.pi), rel=0.02)
    # the loss 1 - a is half-normal with scale sigma
    assert (1 - a).mean() == pytest.approx(sigma * math.sqrt(2 / math.pi), rel=0.02)
    assert stats.kstest(1 - a, "halfnorm", args=(0, sigma)).pvalue > 0.01


def test_complex_combines_both():
    f = noise_factors(DRAWS, 0.05, "complex", np.random.default_rng(2))
    amp = noise_factors(DRAWS, 0.05, "amplitude_only", np.random.default_rng(2))
    ph = noise_factors(DRAWS, 0.05, "phase_only", np.random.default_rng(2))
    np.testing.assert_allclose(f, amp * ph, rtol=1e-14)


def test_amplitude_clamped():
    f = noise_factors(DRAWS, 2.0, "amplitude_only", np.random.default_rng(3))
    assert f.real.min() == 0.0 and f.real.max() <= 1.0


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(0.1, targets=())
    with pytest.raises(ValueError):
        NoiseSpec(0.1, targets=("fc_weights",))
    with pytest.raises(ValueError):
        NoiseSpec(0.1, kind="thermal")


# --- injection ------------------------------------------------------------------

def test_sigma_zero_identity(small_trained):
    net, data = small_trained
    noisy = inject(net, NoiseSpec(0.0, kind="complex", seed=9))
    np.testing.assert_array_equal(noisy.outputs(data.images), net.outputs(data.images))


def test_inject_reproducible_and_preserves_original(small_trained):
    net, _ = small_trained
    f0 = net.layers[0].f_in.copy()
    a = inject(net, NoiseSpec(0.05, seed=4))
    b = inject(net, NoiseSpec(0.05, seed=4))
    c = inject(net, NoiseSpec(0.05, seed=5))
    np.testing.assert_array_equal(a.layers[0].f_in, b.layers[0].f_in)
    np.testing.assert_array_equal(a.layers[1].mask.noise, b.layers[1].mask.noise)
    assert not np.array_equal(a.layers[0].f_in, c.layers[0].f_in)
    np.testing.assert_array_equal(net.layers[0].f_in, f0)
    assert net.layers[0].mask.noise is None


def test_targets_and_fc_untouched(small_trained):
    net, _ = small_trained
    stars = inject(net, NoiseSpec(0.1, targets=("star_matrices",), seed=1))
    masks = inject(net, NoiseSpec(0.1, targets=("filter_masks",), seed=1))
    assert stars.layers[0].mask.noise is None
    assert not np.array_equal(stars.layers[0].f_in, net.layers[0].f_in)
    np.testing.assert_array_equal(masks.layers[0].f_in, net.layers[0].f_in)
    assert masks.layers[0].mask.noise is not None
    for noisy in (stars, masks):
        for a, b in zip(noisy.fc_layers(), net.fc_layers()):
            np.testing.assert_array_equal(a.weight.value, b.weight.value)


# --- sweeps ---------------------------------------------------------------------

def test_sweep_sigma_zero_matches_clean(small_trained):
    net, data = small_trained
    clean = evaluate(net, data).accuracy
    rows = degradation_sweep(net, [0.0, 0.05], 3, ["phase_only", "complex"], data, seed=2)
    assert [(r.sigma, r.kind) for r in rows] == [(0.0, "phase_only"), (0.0, "complex"),
                                                 (0.05, "phase_only"), (0.05, "complex")]
    assert rows[0].mean_acc == clean and rows[0].std_acc == 0.0
    assert all(r.instances == 3 and r.seed == 2 for r in rows)


def test_sweep_needs_two_instances(small_trained):
    net, data = small_trained
    with pytest.raises(ValueError):
        degradation_sweep(net, [0.1], 1, ["complex"], data)


def test_sweep_reproducible(small_trained):
    net, data = small_trained
    a = degradation_sweep(net, [0.05], 2, ["complex"], data, seed=7)
    b = degradation_sweep(net, [0.05], 2, ["complex"], data, seed=7)
    assert a == b


# --- retraining -------------------------------------------------------------------

def test_retrain_scopes(small_trained):
    net, _ = small_trained
    noisy = inject(net, NoiseSpec(0.05, kind="phase_only"))
    set_retrain_scope(noisy, "final_layer_only")
    trainable = [p.name for p in noisy.parameters() if p.trainable]
    assert trainable == [noisy.fc_layers()[-1].weight.name]
    set_retrain_scope(noisy, "full")
    assert not noisy.scale.trainable
    assert all(p.trainable for p in noisy.parameters(include_scale=False))
    with pytest.raises(ValueError):
        set_retrain_scope(noisy, "half")


@pytest.mark.parametrize("scope", ["final_layer_only", "full"])
def test_retrain_keeps_optics_frozen(small_trained, scope):
    net, data = small_trained
    noisy = inject(net, NoiseSpec(0.05, kind="phase_only", seed=3))
    before = [(l.f_in.copy(), None if l.f_out is None else l.f_out.copy(), l.mask.noise.copy())
              for l in noisy.conv_layers()]
    scale = noisy.scale.value.copy()
    retrain(noisy, scope, data, spec=TrainSpec(epochs=1))
    for (f_in, f_out, noise), layer in zip(before, noisy.conv_layers()):
        np.testing.assert_array_equal(layer.f_in, f_in)
        np.testing.assert_array_equal(layer.mask.noise, noise)
        if f_out is not None:
            np.testing.assert_array_equal(layer.f_out, f_out)
    np.testing.assert_array_equal(noisy.scale.value, scale)


def test_bias_sweep():
    cfg = NetworkConfig(preset=None, layers=[
        {"type": "conv", "size": 64, "mask": "phase_only", "activation": "modrelu",
         "bias": "per_element"},
        {"type": "fc", "size": 10}])
    data = synthetic(200)
    net = build_network(cfg)
    train(net, data, spec=TrainSpec(epochs=3))
    clean = evaluate(net, data).accuracy
    rows = bias_noise_sweep(net, [0.0, 0.005, 5.0], 3, data)
    assert rows[0].mean_acc == clean
    assert abs(rows[1].mean_acc - clean) < 0.01
    assert rows[2].mean_acc < clean
    with pytest.raises(ValueError):
        bias_noise_sweep(build_network("PCNN-32-8"), [0.1], 2, data)


def test_fidelity_accuracy_sweep_small():
    data = synthetic(100)
    rows = fidelity_accuracy_sweep(NetworkConfig(preset="PCNN-112-16"), [5.0, 15.0], data, data,
                                   TrainSpec(epochs=15))
    assert [r.theta_deg for r in rows] == [5.0, 15.0]
    assert rows[0].F > rows[1].F and rows[0].T < rows[1].T
    assert rows[0].R_m == pytest.approx(rows[1].R_m * (math.sin(math.radians(15)) / math.sin(math.radians(5))) ** 2, rel=1e-9)
    assert all(r.accuracy > 0.5 for r in rows)


# --- MNIST-scale properties -------------------------------------------------------

@needs_mnist
def test_phase_worse_than_amplitude(desk_trained, desk_data):
    net, _ = desk_trained
    rows = degradation_sweep(net, [0.05, 0.1], 5, ["phase_only", "amplitude_only"], desk_data[1])
    by = {(r.sigma, r.kind): r.mean_acc for r in rows}
    for s in (0.05, 0.1):
        assert by[(s, "phase_only")] <= by[(s, "amplitude_only")]


@needs_mnist
def test_monotone_degradation(desk_trained, desk_data):
    net, _ = desk_trained
    sigmas = [0.02, 0.05, 0.1, 0.2]
    rows = degradation_sweep(net, sigmas, 5, ["phase_only", "amplitude_only", "complex"], desk_data[1])
    by = {(r.sigma, r.kind): r.mean_acc for r in rows}
    for kind in ("phase_only", "amplitude_only", "complex"):
        for s1 in sigmas:
            for s2 in sigmas:
                if s2 >= 2 * s1:
                    assert by[(s2, kind)] <= by[(s1, kind)] + 0.01


@needs_mnist
def test_large_phase_noise_randomizes(desk_trained, desk_data):
    net, _ = desk_trained
    (row,) = degradation_sweep(net, [0.5], 5, ["phase_only"], desk_data[1])
    assert row.mean_acc < 0.2


@needs_mnist
def test_retraining_clean_network_harmless(desk_trained, desk_data):
    net, _ = desk_trained
    tr, te = desk_data
    clean = evaluate(net, te).accuracy
    copy = inject(net, NoiseSpec(0.0))
    rep = retrain(copy, "final_layer_only", tr, te, TrainSpec(batch_size=8, epochs=10))
    assert rep.final_test_accuracy >= clean - 0.005
