import numpy as np
import pytest
import torch

from unitvc.config import SystemConfig
from unitvc.features import extract_utterance
from unitvc.synth import toy_corpus
from unitvc.training import ModelState, collate
from unitvc.units import fit_vocabulary

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def cfg():
    return SystemConfig.toy()


@pytest.fixture(scope="session")
def corpus():
    return toy_corpus(10, seed=0)


@pytest.fixture(scope="session")
def vocab(corpus):
    c = SystemConfig.toy()
    return fit_vocabulary(corpus, c.units.vocab_size, c.features, seed=0)


@pytest.fixture(scope="session")
def records(corpus, vocab):
    c = SystemConfig.toy()
    return [extract_utterance(w, c, vocab, f"toy{i:03d}", label=f"spk{i % 5}")
            for i, w in enumerate(corpus)]


@pytest.fixture
def batch(records):
    return collate(records[:3])


@pytest.fixture
def state(cfg, vocab):
    return ModelState.create(cfg, vocab, seed=0)
