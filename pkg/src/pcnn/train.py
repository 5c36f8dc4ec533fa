"""Adam training loop, evaluation and reports."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .data import Dataset
from .network import NUM_CLASSES, Network

CALIBRATION_SAMPLES = 64


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.trainable:
                continue
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainSpec:
    batch_size: int = 8
    epochs: int = 80
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    train_subset: int | None = None
    test_subset: int | None = None
    eval_train: bool = True


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    confusion: np.ndarray

    @property
    def per_class_correct(self) -> np.ndarray:
        return np.diag(self.confusion)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class TrainReport:
    history: list[EpochRecord] = field(default_factory=list)
    parameter_count: int = 0
    wall_clock: float = 0.0

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]

    @property
    def final_train_accuracy(self) -> float:
        return self.final.train_acc

    @property
    def final_test_accuracy(self) -> float:
        return self.final.test_acc

    def to_csv(self, prefix: dict | None = None) -> str:
        prefix = prefix or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(prefix) + ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"])
        for r in self.history:
            w.writerow([_fmt(v) for v in prefix.values()] + [r.epoch] + [
                _fmt(v) for v in (r.train_loss, r.train_acc, r.test_loss, r.test_acc)])
        return buf.getvalue()

    def summary(self) -> str:
        f = self.final
        return (f"epochs={f.epoch} params={self.parameter_count} train_acc={f.train_acc:.4f} "
                f"test_acc={f.test_acc:.4f}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}" if math.isfinite(v) else str(v)
    return str(v)


def evaluate(network: Network, dataset: Dataset, chunk: int = 1000) -> EvalResult:
    """Accuracy from the argmax of output power, with cross-entropy and confusion counts."""
    if len(dataset) == 0:
        return EvalResult(float("nan"), float("nan"), np.zeros((NUM_CLASSES, NUM_CLASSES), int))
    beta2 = float(network.scale.value[0]) ** 2
    conf = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    loss = 0.0
    for i in range(0, len(dataset), chunk):
        out = network.outputs(dataset.images[i:i + chunk])
        y = dataset.labels[i:i + chunk]
        p = np.abs(out) ** 2
        logits = beta2 * p
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss -= logp[np.arange(len(y)), y].sum()
        np.add.at(conf, (y, np.argmax(p, axis=1)), 1)
    acc = float(np.trace(conf) / len(dataset))
    return EvalResult(acc, float(loss / len(dataset)), conf)


def train(network: Network, train_set: Dataset, test_set: Dataset | None = None,
          spec: TrainSpec | None = None, log=None) -> TrainReport:
    """Adam on minibatches reshuffled each epoch from ``spec.seed``.

    History row 0 holds the metrics before any update.  Parameters with
    ``trainable=False`` are left untouched.
    """
    spec = spec or TrainSpec()
    train_set = train_set.subset(spec.train_subset)
    if test_set is not None:
        test_set = test_set.subset(spec.test_subset)
    start = time.perf_counter()
    if not network.calibrated:
        network.calibrate_scale(train_set.images[:CALIBRATION_SAMPLES])
    params = network.parameters()
    opt = Adam(params, spec.lr, spec.beta1, spec.beta2, spec.eps)
    rng = np.random.default_rng(spec.seed)
    report = TrainReport(parameter_count=network.parameter_count())

    def record(epoch: int, running: float | None):
        tr = evaluate(network, train_set) if spec.eval_train else None
        te = evaluate(network, test_set) if test_set is not None else None
        nan = float("nan")
        rec = EpochRecord(epoch,
                          tr.loss if tr else (running if running is not None else nan),
                          tr.accuracy if tr else nan,
                          te.loss if te else nan, te.accuracy if te else nan)
        report.history.append(rec)
        if log:
            log(rec)

    record(0, None)
    n = len(train_set)
    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, spec.batch_size)):
            idx = order[lo:lo + spec.batch_size]
            opt.zero_grad()
            loss = network.loss(train_set.images[idx], train_set.labels[idx])
            value = float(loss.value)
            if not math.isfinite(value):
                raise DivergenceError(epoch, b)
            ag.backward(loss)
            opt.step()
            total += value * len(idx)
        record(epoch, total / max(n, 1))
    report.wall_clock = time.perf_counter() - start
    return report
