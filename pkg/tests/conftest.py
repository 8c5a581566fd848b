import os
from pathlib import Path

import numpy as np
import pytest

from semguard.pipeline import RunConfig, load_training_data, prepare_phase_one

MNIST_DIR = Path(os.environ.get("SEMGUARD_MNIST_DIR", "/root/data/mnist"))


def _find(stem: str) -> Path | None:
    for name in (f"{stem}-ubyte", f"{stem.replace('-idx', '.idx')}-ubyte"):
        if (MNIST_DIR / name).exists():
            return MNIST_DIR / name
    return None


@pytest.fixture(scope="session")
def mnist_paths():
    paths = {
        "train_images": _find("train-images-idx3"),
        "train_labels": _find("train-labels-idx1"),
        "test_images": _find("t10k-images-idx3"),
        "test_labels": _find("t10k-labels-idx1"),
    }
    if paths["train_images"] is None or paths["train_labels"] is None:
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    return {k: str(v) if v else None for k, v in paths.items()}


@pytest.fixture(scope="session")
def run_config(mnist_paths):
    return RunConfig(train_images=mnist_paths["train_images"], train_labels=mnist_paths["train_labels"])


@pytest.fixture(scope="session")
def mnist_train(run_config):
    return load_training_data(run_config)


@pytest.fixture(scope="session")
def phase_one(run_config, mnist_train):
    """Clean encoder trained on the 10,000-sample baseline with default settings."""
    return prepare_phase_one(run_config, mnist_train)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
