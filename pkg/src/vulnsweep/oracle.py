"""Verdict sources.

Simulations replace the human reviewer with a fallible oracle built from
ground truth: non-vulnerable documents are always judged non_vulnerable (no
false positives), vulnerable documents are missed with probability
``error_rate`` on every call, double checks included, each draw independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Document

VULNERABLE = "vulnerable"
NON_VULNERABLE = "non_vulnerable"
VERDICTS = (VULNERABLE, NON_VULNERABLE)


@dataclass(frozen=True)
class OracleConfig:
    error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")


def simulated_verdict(
    doc: Document,
    category: str,
    config: OracleConfig,
    rng: np.random.Generator,
) -> str:
    """One independent verdict draw for ``doc`` under ``category`` truth."""
    if category not in doc.truth_categories:
        return NON_VULNERABLE
    # rng.random() is in [0, 1), so error_rate 0 can never miss and 1 always does
    return VULNERABLE if rng.random() >= config.error_rate else NON_VULNERABLE


class SimulatedReviewer:
    """Stateful oracle bound to one corpus, category, and rng stream.

    Callable as (doc_id, purpose) -> verdict so the engine can consume
    queues without knowing it is talking to a simulation.
    """

    def __init__(self, corpus: Corpus, category: str, config: OracleConfig):
        if category not in corpus.category_index:
            raise ValueError(f"unknown category {category!r}")
        self.corpus = corpus
        self.category = category
        self.config = config
        self.rng = np.random.default_rng(config.seed)

    def __call__(self, doc_id: int, purpose: str = "inspect") -> str:
        return simulated_verdict(
            self.corpus.doc(doc_id), self.category, self.config, self.rng
        )
