import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

MNIST_STEMS = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def mnist_dir():
    env = os.environ.get("KLN_MNIST_DIR")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parent.parent / "data" / "mnist")
    for root in candidates:
        if all(
            (root / stem).exists() or (root / (stem + ".gz")).exists()
            for stem in MNIST_STEMS.values()
        ):
            return root
    return None


def require_mnist():
    root = mnist_dir()
    if root is None:
        pytest.skip(
            "MNIST IDX files not found (set KLN_MNIST_DIR or run "
            "scripts/fetch_mnist.py into data/mnist)"
        )
    return root


@pytest.fixture(scope="session")
def mnist():
    from kln.data import load_idx

    root = require_mnist()

    def path(stem):
        p = root / stem
        return p if p.exists() else root / (stem + ".gz")

    train = load_idx(path(MNIST_STEMS["train_images"]), path(MNIST_STEMS["train_labels"]),
                     name="mnist-train")
    test = load_idx(path(MNIST_STEMS["test_images"]), path(MNIST_STEMS["test_labels"]),
                    name="mnist-test")
    return train, test


def pytest_runtest_logreport(report):
    # one verdict line per acceptance criterion, including skips
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        name = report.nodeid.split("::")[-1]
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        print(f"\nACCEPTANCE {name}: {verdict}", flush=True)
