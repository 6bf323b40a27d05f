import numpy as np
import pytest

from textcompress.transformer import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(vocab_size=16, layers=2, d_model=16, d_ff=32, heads=2, max_len=64)


def random_ids(rng, shape, vocab=16, low=6):
    """Ids above the reserved range so no sequence accidentally contains PAD/BOS/EOS."""
    return rng.integers(low, vocab, size=shape)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
