import numpy as np
import pytest

from llm2comp.config import ModelConfig
from llm2comp.model import ModelPair, init_base

TINY = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, base_vocab=28,
                   n_memory_tokens=4, max_seq_len=48, lora_rank=4, lora_alpha=8.0)
BYTES = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, n_memory_tokens=4,
                    max_seq_len=64, lora_rank=4, lora_alpha=8.0)


def make_pair(config=TINY, seed=0, b_std=0.0):
    rng = np.random.default_rng(seed)
    pair = ModelPair.fresh(init_base(config, rng), rng)
    if b_std:
        for _, b in pair.encoder.lora.pairs.values():
            b.data[...] = rng.normal(0.0, b_std, b.data.shape)
    return pair


@pytest.fixture
def pair():
    return make_pair(TINY, 0, b_std=0.1)


@pytest.fixture
def byte_pair():
    return make_pair(BYTES, 0, b_std=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
