"""Feature extraction.

Turns a corpus into a sparse, row-normalized feature matrix in one of three
modes:

- ``text``: counts of the top-M tf-idf tokens, each row L2-normalized.
- ``hybrid``: text counts with the document's crash count appended as one
  extra column before normalization.
- ``metrics``: the manifest's numeric metric columns, min-max scaled to
  [0, 1] per column, rows left unnormalized.

Token scores follow the corpus-level tf-idf sum

    score(t) = total_count(t) * (ln(|D| / df(t)) + 1)

with natural log, no stemming and no stop-word removal. Vocabulary is
selected once per corpus and frozen; it is not re-selected as labels arrive.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus

MODES = ("text", "hybrid", "metrics")
DEFAULT_VOCABULARY_SIZE = 4000

# ASCII alphanumerics and underscore; everything else separates tokens.
_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+")


@dataclass(frozen=True)
class Vocabulary:
    """Top-M corpus tokens ordered by descending tf-idf score.

    Ties in score are broken lexicographically ascending so selection is
    reproducible across runs and platforms.
    """

    tokens: tuple[str, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-document feature rows for one corpus and mode.

    ``rows`` is CSR with one row per doc_id. Documents containing no
    vocabulary token keep an all-zero row so every candidate stays
    queryable.
    """

    rows: sp.csr_matrix
    dim: int
    mode: str
    vocabulary: Vocabulary | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rows.shape[1] != self.dim:
            raise ValueError("rows/dim mismatch")


def tokenize(body: str) -> Counter[str]:
    """Count maximal alphanumeric-or-underscore runs in ``body``."""
    return Counter(_TOKEN_RE.findall(body))


def select_vocabulary(corpus: Corpus, m: int = DEFAULT_VOCABULARY_SIZE) -> Vocabulary:
    """Pick the min(m, distinct) highest-scoring tokens of the corpus."""
    if m <= 0:
        raise ValueError("vocabulary size must be positive")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    totals: Counter[str] = Counter()
    doc_freq: Counter[str] = Counter()
    for doc in corpus.documents:
        counts = tokenize(doc.body)
        totals.update(counts)
        doc_freq.update(counts.keys())
    n_docs = len(corpus)
    scored = [
        (total * (math.log(n_docs / doc_freq[tok]) + 1.0), tok)
        for tok, total in totals.items()
    ]
    scored.sort(key=lambda st: (-st[0], st[1]))
    top = scored[:m]
    return Vocabulary(
        tokens=tuple(tok for _, tok in top),
        scores=tuple(score for score, _ in top),
    )


def build_matrix(
    corpus: Corpus, mode: str, vocabulary: Vocabulary | None = None
) -> FeatureMatrix:
    """Build the feature matrix for ``corpus`` in ``mode``.

    text/hybrid require ``vocabulary``; metrics requires a non-empty
    metric_schema on the corpus.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "metrics":
        if vocabulary is not None:
            raise ValueError("metrics mode takes no vocabulary")
        return _build_metrics_matrix(corpus)
    if vocabulary is None:
        raise ValueError(f"{mode} mode requires a vocabulary")
    return _build_token_matrix(corpus, mode, vocabulary)


def _build_token_matrix(corpus: Corpus, mode: str, vocab: Vocabulary) -> FeatureMatrix:
    index = vocab.index()
    dim = len(vocab) + (1 if mode == "hybrid" else 0)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for doc in corpus.documents:
        counts = tokenize(doc.body)
        cols = sorted(
            (index[t], float(c)) for t, c in counts.items() if t in index
        )
        for col, cnt in cols:
            indices.append(col)
            data.append(cnt)
        if mode == "hybrid" and doc.crash_count > 0:
            indices.append(len(vocab))
            data.append(float(doc.crash_count))
        indptr.append(len(indices))
    rows = sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int32), np.asarray(indptr)),
        shape=(len(corpus), dim),
    )
    _normalize_rows(rows)
    return FeatureMatrix(rows=rows, dim=dim, mode=mode, vocabulary=vocab)


def _normalize_rows(rows: sp.csr_matrix) -> None:
    # in-place L2 normalization; zero rows stay zero
    norms = np.sqrt(rows.multiply(rows).sum(axis=1)).A1
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    rows.data *= np.repeat(scale, np.diff(rows.indptr))


def _build_metrics_matrix(corpus: Corpus) -> FeatureMatrix:
    schema = corpus.metric_schema
    if not schema:
        raise ValueError("metrics mode requires a metric schema")
    dim = len(schema)
    dense = np.zeros((len(corpus), dim))
    has_metrics = np.zeros(len(corpus), dtype=bool)
    for doc in corpus.documents:
        if len(doc.metrics) == dim:
            dense[doc.doc_id] = doc.metrics
            has_metrics[doc.doc_id] = True
    # min-max scale each column over documents that carry metrics; documents
    # without a metric vector keep all-zero rows and do not skew the range.
    # Constant columns scale to 0 (numerator vanishes).
    if has_metrics.any():
        present = dense[has_metrics]
        lo = present.min(axis=0)
        span = present.max(axis=0) - lo
        span[span == 0] = 1.0
        dense[has_metrics] = (present - lo) / span
    rows = sp.csr_matrix(dense)
    return FeatureMatrix(rows=rows, dim=dim, mode="metrics")


def save_features(fm: FeatureMatrix, out_dir: str | Path) -> None:
    """Persist ``fm`` to ``out_dir``.

    Writes triplets.csv (doc_id, col, value) and vocabulary.txt as the
    documented interchange formats plus matrix.npz, which load_features
    prefers for speed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    coo = fm.rows.tocoo()
    with open(out / "triplets.csv", "w", encoding="utf-8") as fh:
        fh.write("doc_id,col,value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r},{c},{float(v)!r}\n")
    sp.save_npz(out / "matrix.npz", fm.rows)
    if fm.vocabulary is not None:
        with open(out / "vocabulary.txt", "w", encoding="utf-8") as fh:
            for tok, score in zip(fm.vocabulary.tokens, fm.vocabulary.scores):
                fh.write(f"{tok}\t{score!r}\n")
    meta = {
        "mode": fm.mode,
        "rows": fm.rows.shape[0],
        "dim": fm.dim,
        "nnz": int(fm.rows.nnz),
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_features(store_dir: str | Path) -> FeatureMatrix:
    store = Path(store_dir)
    meta_path = store / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no feature store at {store}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    npz = store / "matrix.npz"
    if npz.is_file():
        rows = sp.csr_matrix(sp.load_npz(npz))
    else:
        rows = _load_triplets(store / "triplets.csv", meta["rows"], meta["dim"])
    vocab = None
    vocab_path = store / "vocabulary.txt"
    if vocab_path.is_file():
        tokens: list[str] = []
        scores: list[float] = []
        for line in vocab_path.read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, _, score = line.partition("\t")
            tokens.append(tok)
            scores.append(float(score))
        vocab = Vocabulary(tokens=tuple(tokens), scores=tuple(scores))
    return FeatureMatrix(rows=rows, dim=meta["dim"], mode=meta["mode"], vocabulary=vocab)


def _load_triplets(path: Path, n_rows: int, dim: int) -> sp.csr_matrix:
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            r, c, v = line.rstrip("\n").split(",")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, dim))
    return coo.tocsr()
