import sys

import pytest
import torch

from mathcurric.corpus import generate_synthetic_corpus
from mathcurric.model import ModelConfig, build_model
from mathcurric.tokenizer import build_vocab

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus():
    return generate_synthetic_corpus(12, seed=3)


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_vocab(corpus)


def tiny_config(vocab_size, **overrides):
    cfg = dict(vocab_size=vocab_size, k=8, heads=2, ffn_dim=16, L=1, L_U=1, L_G=1, max_len=96)
    cfg.update(overrides)
    return ModelConfig(**cfg)


@pytest.fixture
def tiny_model(vocab):
    return build_model(tiny_config(len(vocab)), seed=0)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)
