"""Shared fixtures: small seeded corpora and their feature matrices.

Also collects the acceptance scorecard lines and reprints them after the
run, where pytest's output capture cannot swallow them.
"""

from __future__ import annotations

import pytest

from synthdata import synth_corpus
from vulnsweep.features import build_matrix, select_vocabulary

scorecard: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if scorecard:
        terminalreporter.section("acceptance checks")
        for line in scorecard:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus():
    # 200 docs, 20 planted positives; big enough for the loop to learn,
    # small enough that a full session runs in well under a second
    return synth_corpus(200, 20, seed=7, signature_tokens=4, noise_rate=0.02)


@pytest.fixture(scope="session")
def small_matrix(small_corpus):
    vocab = select_vocabulary(small_corpus, 500)
    return build_matrix(small_corpus, "text", vocab)
