import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from evcl_engine.bayes.network import NetworkSpec, init_posterior  # noqa: E402
from evcl_engine.continual.methods import MethodConfig  # noqa: E402
from evcl_engine.data.streams import synth_blobs  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs on real MNIST (needs EVCL_DATA_DIR)")


def mnist_dir() -> Path:
    return Path(os.getenv("EVCL_DATA_DIR", "data")) / "mnist"


def has_mnist() -> bool:
    d = mnist_dir()
    return any((d / f"train-images-idx3-ubyte{ext}").is_file() for ext in ("", ".gz"))


def finite_difference(loss_fn, node, eps: float = 1e-4) -> np.ndarray:
    """Central differences of loss_fn() with respect to every entry of node.value."""
    grad = np.zeros_like(node.value)
    it = np.nditer(node.value, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = node.value[idx]
        node.value[idx] = original + eps
        plus = loss_fn()
        node.value[idx] = original - eps
        minus = loss_fn()
        node.value[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad



@pytest.fixture
def tiny_spec():
    return NetworkSpec(input_dim=3, hidden=(4,), output_dim=2, head_mode="multi", num_heads=2)


@pytest.fixture
def tiny_params(tiny_spec):
    return init_posterior(tiny_spec, seed=0)


@pytest.fixture
def synth_stream():
    return synth_blobs(num_tasks=3, n=60, dim=2, separation=5.0, seed=0)


@pytest.fixture
def fast_config():
    return MethodConfig("evcl", epochs=3, batch_size=20, learning_rate=0.01,
                        mc_train_samples=2, mc_eval_samples=4, fisher_samples=30, ewc_lambda=10.0)


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray):
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)
