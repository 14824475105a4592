import pytest
import torch
from hypothesis import settings

from vsrssl.corpus import CorpusConfig, build_corpus

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

TINY = CorpusConfig(n_pretrain=24, n_words=4, word_per_class=8, n_sentences=24, seed=3)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    corpus = build_corpus(TINY)
    corpus.save(tmp_path_factory.mktemp("corpus"))
    return corpus


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
