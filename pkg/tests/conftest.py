from functools import lru_cache

import numpy as np
import pytest

from obr.synth import CorpusSpec, PageSpec, corpus_text, render_corpus_page, render_page


@lru_cache(maxsize=None)
def rendered(text: str, dpi: float = 200.0):
    return render_page(PageSpec(dpi=dpi, text=text))


@lru_cache(maxsize=None)
def corpus_page(index: int, **overrides):
    return render_corpus_page(CorpusSpec(**overrides), index)


@pytest.fixture(scope="session")
def clean_page():
    return rendered(corpus_text(np.random.default_rng(7), 244))


@pytest.fixture(scope="session")
def mild_page():
    return corpus_page(3)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
