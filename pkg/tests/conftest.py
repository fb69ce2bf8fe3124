"""Shared fixtures: a tiny deterministic corpus, a small float64 model, and
the acceptance-criteria reporter that prints one PASS/FAIL line per criterion."""

import pytest

from recstyle.corpus import build_vocabulary, generate_synthetic, tiny_synthetic_spec
from recstyle.model import init_params
from recstyle.training import build_triples

_CRITERIA: list[tuple[int, bool, str]] = []


@pytest.fixture(scope="session")
def criterion():
    """Record and print '[criterion N] PASS|FAIL detail', then assert."""

    def record(number: int, ok: bool, detail: str) -> None:
        _CRITERIA.append((number, ok, detail))
        print(f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_CRITERIA):
        terminalreporter.write_line(
            f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {detail}"
        )


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_synthetic(tiny_synthetic_spec())


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return build_vocabulary(tiny_corpus)


@pytest.fixture(scope="session")
def tiny_params(tiny_vocab):
    return init_params(tiny_vocab, embed_size=8, hidden_size=8, seed=3)


@pytest.fixture(scope="session")
def tiny_triples(tiny_corpus):
    return build_triples(tiny_corpus, tiny_corpus, max_distance=2, seed="t:0")
