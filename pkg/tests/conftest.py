import os
from pathlib import Path

import numpy as np
import pytest

from pcnn.data import load_split
from pcnn.network import build_network
from pcnn.train import TrainSpec, train

REPO = Path(__file__).resolve().parents[1]


def mnist_dir() -> Path:
    base = os.environ.get("PCNN_DATA_DIR")
    return (Path(base) if base else REPO / "data") / "mnist"


def have_mnist() -> bool:
    d = mnist_dir()
    return d.is_dir() and any(d.glob("t10k-images-idx3-ubyte*"))


needs_mnist = pytest.mark.skipif(
    not have_mnist(),
    reason=f"MNIST IDX files not found under {mnist_dir()} (set PCNN_DATA_DIR; see README)")


@pytest.fixture(scope="session")
def mnist():
    if not have_mnist():
        pytest.skip(f"MNIST IDX files not found under {mnist_dir()}")
    return load_split(mnist_dir(), "train"), load_split(mnist_dir(), "test")


@pytest.fixture(scope="session")
def desk_data(mnist):
    tr, te = mnist
    return tr.subset(10000), te.subset(2000)


@pytest.fixture(scope="session")
def desk_trained(desk_data):
    """PCNN-112-16, seed 0, 10k/2k MNIST, 10 epochs, batch 8."""
    tr, te = desk_data
    net = build_network("PCNN-112-16")
    report = train(net, tr, te, TrainSpec(epochs=10, seed=0))
    return net, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
