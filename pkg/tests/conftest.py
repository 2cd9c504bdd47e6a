import pytest

from fpx.scenarios import default_corpus
from fpx.toymodel import init_model


@pytest.fixture(scope="session")
def corpus():
    return default_corpus()


@pytest.fixture(scope="session")
def small_model():
    return init_model(42, 2, 32, 64, 64)


@pytest.fixture(scope="session")
def short_corpus(corpus):
    return [seq[:12] for seq in corpus[:3]]


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.REPORT):
            terminalreporter.write_line(line)
