from __future__ import annotations

import sys

import numpy as np
import pytest

from blindspot.mae import EncoderConfig

TINY = EncoderConfig(embed_dim=24, depth=1, n_heads=2, decoder_dim=16, decoder_depth=1, decoder_heads=2)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks")


@pytest.fixture
def tiny_config() -> EncoderConfig:
    return TINY


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_clips(n: int, frames: int = 2, size: int = 32, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((n, 3, frames, size, size), dtype=np.float32)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, result in results.items():
        terminalreporter.write_line(module.format_line(name, result))
