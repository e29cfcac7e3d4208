from __future__ import annotations

import asyncio
import threading

import numpy as np
import pytest

from hspi.datasets import two_blobs
from hspi.engine.training import ModelConfig, build_model, train_reference
from hspi.oracle.local import LocalOracle
from hspi.oracle.server import OracleServer
from hspi.platform import PlatformProfile, default_registry_path, registry_load


@pytest.fixture(scope="session")
def blobs():
    return two_blobs(n=64, dim=4, seed=0)


@pytest.fixture(scope="session")
def mlp(blobs):
    return train_reference(ModelConfig(kind="mlp", hidden=8), blobs, epochs=30, lr=0.05, seed=0)


@pytest.fixture(scope="session")
def cnn():
    """Untrained 8x8 CNN; enough to exercise every conv path."""
    return build_model(ModelConfig(kind="cnn", width=2), (3, 8, 8), 10, np.random.default_rng(3))


@pytest.fixture(scope="session")
def registry():
    return registry_load(default_registry_path())


@pytest.fixture
def fp32():
    return PlatformProfile(id="fp32", format="fp32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def served(mlp, registry):
    """An fp16 oracle behind a real TCP listener on a background event loop."""
    oracle = LocalOracle(mlp, registry.get("fp16"))
    loop = asyncio.new_event_loop()
    thread = threading.Thread(target=loop.run_forever, daemon=True)
    thread.start()
    server = OracleServer(oracle, "127.0.0.1", 0, health_port=0, base_seed=0)
    port = asyncio.run_coroutine_threadsafe(server.start(), loop).result(10)
    yield oracle, port
    asyncio.run_coroutine_threadsafe(server.close(), loop).result(10)
    loop.call_soon_threadsafe(loop.stop)
    thread.join(5)
    loop.close()
