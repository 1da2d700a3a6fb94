import time
import warnings

import pytest
import torch

from wordbound.encoder import ModelConfig
from wordbound.pretrainer import TrainConfig, pretrain
from wordbound.tokenizer_core import TokenizerConfig, train_wordpiece
from wordbound.toydata import toy_corpus

torch.set_num_threads(1)

# Desk-scale analogue of the smallest pretraining configuration.
DESK_MODEL = dict(n_layers=2, n_heads=4, d_model=64, max_seq_len=128)
DESK_TRAIN = dict(batch_size=16, total_steps=300, peak_lr=3e-3, grad_clip=1.0, eval_every=50, seq_len=128, eval_fraction=0.2)


@pytest.fixture(scope="session")
def corpus():
    return toy_corpus(200, seed=0)


@pytest.fixture(scope="session")
def boundless_vocab(corpus):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train_wordpiece(corpus, TokenizerConfig(vocab_size=200, marker_mode="boundless"))


@pytest.fixture(scope="session")
def desk_run(corpus, boundless_vocab):
    """Cached desk pretraining runs keyed by (schema, implicit_head); each returns (result, seconds)."""
    cache = {}

    def run(schema="none", implicit=False):
        key = (schema, implicit)
        if key not in cache:
            mc = ModelConfig(vocab_size=len(boundless_vocab), wb_schema=schema, implicit_head=implicit, **DESK_MODEL)
            start = time.perf_counter()
            res = pretrain(corpus, boundless_vocab, mc, TrainConfig(**DESK_TRAIN))
            cache[key] = (res, time.perf_counter() - start)
        return cache[key]

    return run


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
