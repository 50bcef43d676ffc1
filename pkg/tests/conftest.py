import os
from pathlib import Path

import numpy as np
import pytest

from noisebench.datasets import synth_two_template
from noisebench.nn import build_network

MNIST_ROOT = Path(os.environ.get("NOISEBENCH_MNIST", "/root/data/mnist"))
CIFAR_ROOT = Path(os.environ.get("NOISEBENCH_CIFAR", "/root/data/cifar10"))


def mnist_available() -> bool:
    return (MNIST_ROOT / "t10k-images-idx3-ubyte").exists() or (MNIST_ROOT / "t10k-images-idx3-ubyte.gz").exists()


@pytest.fixture(scope="session")
def mnist_test():
    if not mnist_available():
        pytest.skip("MNIST files not found")
    from noisebench.datasets import load_mnist

    return load_mnist(MNIST_ROOT, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bars():
    return synth_two_template(12, 12, 40, 0.1, seed=3)


@pytest.fixture
def tiny_cnn():
    return build_network("cnn_mnist", (1, 16, 16), 4, init_seed=2, dtype=np.float64)


# one line per acceptance criterion, printed after the run
CRITERIA_RESULTS: dict[int, tuple[bool | None, str]] = {}


def record_criterion(number: int, ok: bool | None, detail: str) -> None:
    CRITERIA_RESULTS[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA_RESULTS):
        ok, detail = CRITERIA_RESULTS[number]
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
