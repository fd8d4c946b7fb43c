"""Corpus ingestion and storage.

A corpus is an immutable collection of source documents plus ground-truth
vulnerability annotations used by simulations. Documents are ingested from a
manifest CSV with columns:

    path, crash_count, vuln_types, <metric columns...>

``vuln_types`` holds zero or more semicolon-separated vulnerability type
strings; an empty field means the document is not known to be vulnerable.
Metric columns are optional and declared by a sidecar file next to the
manifest (``<manifest>.metrics``, one column name per line). Document bodies
are read from ``path`` relative to the manifest directory.
"""

from __future__ import annotations

import csv
import json
import pickle
from dataclasses import dataclass, field
from pathlib import Path


class IngestionError(Exception):
    """Raised when a manifest or document cannot be ingested."""


ALL_CATEGORY = "All"
OTHER_CATEGORY = "Other"

# Raw vulnerability type -> reporting category. Types not listed map to Other.
TYPE_CATEGORIES: dict[str, str] = {
    "protection mechanism failure": "Protection Mechanism Failure",
    "uncontrolled resource consumption": "Resource Management Errors",
    "improper resource shutdown or release": "Resource Management Errors",
    "resource management errors": "Resource Management Errors",
    "use after free": "Resource Management Errors",
    "resource leak": "Resource Management Errors",
    "data processing errors": "Data Processing Errors",
    "code quality": "Code Quality",
    "race conditions": "Other",
    "configuration": "Other",
    "environment": "Other",
    "traversal": "Other",
    "link-following": "Other",
    "other": "Other",
}


def group_categories(raw_types: set[str]) -> set[str]:
    """Map raw vulnerability type names to reporting categories.

    Unknown types map to "Other". A non-empty input always contributes the
    union category "All"; an empty input yields the empty set.
    """
    if not raw_types:
        return set()
    cats = {TYPE_CATEGORIES.get(t.strip().lower(), OTHER_CATEGORY) for t in raw_types}
    cats.add(ALL_CATEGORY)
    return cats


@dataclass(frozen=True)
class Document:
    """One source file under inspection."""

    doc_id: int
    path: str
    body: str
    crash_count: int
    vuln_types: tuple[str, ...]
    truth_categories: frozenset[str]
    metrics: tuple[float, ...] = ()


@dataclass
class Corpus:
    """Document collection with per-category ground truth.

    ``category_index`` maps a category name to the set of doc_ids vulnerable
    under it; the "All" entry covers every document with non-empty
    truth_categories. Built from the documents at construction, never
    mutated afterwards.
    """

    documents: list[Document]
    metric_schema: tuple[str, ...] = ()
    category_index: dict[str, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [d.doc_id for d in self.documents]
        if ids != list(range(len(ids))):
            raise IngestionError("doc_ids must be contiguous from 0 in document order")
        if not self.category_index:
            self.category_index = build_category_index(self.documents)

    def __len__(self) -> int:
        return len(self.documents)

    def doc(self, doc_id: int) -> Document:
        return self.documents[doc_id]

    def categories(self) -> list[str]:
        return sorted(self.category_index)


def build_category_index(documents: list[Document]) -> dict[str, frozenset[int]]:
    by_cat: dict[str, set[int]] = {ALL_CATEGORY: set()}
    for doc in documents:
        for cat in doc.truth_categories:
            by_cat.setdefault(cat, set()).add(doc.doc_id)
    return {name: frozenset(ids) for name, ids in by_cat.items()}


def _parse_vuln_types(raw: str) -> tuple[str, ...]:
    parts = [p.strip() for p in raw.split(";")]
    return tuple(p for p in parts if p)


def make_document(
    doc_id: int,
    path: str,
    body: str,
    crash_count: int = 0,
    vuln_types: tuple[str, ...] = (),
    metrics: tuple[float, ...] = (),
) -> Document:
    """Build a Document, deriving truth_categories from the raw types."""
    return Document(
        doc_id=doc_id,
        path=path,
        body=body,
        crash_count=crash_count,
        vuln_types=vuln_types,
        truth_categories=frozenset(group_categories(set(vuln_types))),
        metrics=metrics,
    )


def load_manifest(manifest_path: str | Path) -> Corpus:
    """Ingest the manifest CSV at ``manifest_path`` into a Corpus.

    Raises IngestionError on missing document files, malformed crash counts,
    duplicate paths, or non-numeric metric values. Metric values missing from
    a row default to 0.0.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise IngestionError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent

    metric_schema = read_metric_sidecar(manifest_path)

    documents: list[Document] = []
    seen_paths: set[str] = set()
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError("manifest has no header row")
        required = {"path", "crash_count", "vuln_types"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise IngestionError(f"manifest missing columns: {sorted(missing)}")
        absent = sorted(set(metric_schema) - set(reader.fieldnames))
        if absent:
            raise IngestionError(f"metric columns declared but absent: {absent}")

        for lineno, row in enumerate(reader, start=2):
            rel = (row.get("path") or "").strip()
            if not rel:
                raise IngestionError(f"line {lineno}: empty path")
            if rel in seen_paths:
                raise IngestionError(f"line {lineno}: duplicate path {rel!r}")
            seen_paths.add(rel)
            try:
                crash = int(row.get("crash_count") or 0)
            except ValueError as exc:
                raise IngestionError(f"line {lineno}: bad crash_count") from exc
            if crash < 0:
                raise IngestionError(f"line {lineno}: negative crash_count")
            metrics: list[float] = []
            for col in metric_schema:
                raw = (row.get(col) or "").strip()
                if not raw:
                    metrics.append(0.0)
                    continue
                try:
                    metrics.append(float(raw))
                except ValueError as exc:
                    raise IngestionError(f"line {lineno}: bad metric {col!r}") from exc
            file_path = root / rel
            if not file_path.is_file():
                raise IngestionError(f"line {lineno}: document not found: {file_path}")
            body = file_path.read_text(encoding="utf-8", errors="replace")
            documents.append(
                make_document(
                    doc_id=len(documents),
                    path=rel,
                    body=body,
                    crash_count=crash,
                    vuln_types=_parse_vuln_types(row.get("vuln_types") or ""),
                    metrics=tuple(metrics),
                )
            )
    if not documents:
        raise IngestionError("manifest lists no documents")
    return Corpus(documents=documents, metric_schema=metric_schema)


def read_metric_sidecar(manifest_path: Path) -> tuple[str, ...]:
    sidecar = manifest_path.with_name(manifest_path.name + ".metrics")
    if not sidecar.is_file():
        return ()
    names = [ln.strip() for ln in sidecar.read_text(encoding="utf-8").splitlines()]
    return tuple(n for n in names if n and not n.startswith("#"))


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    """Persist a corpus to ``out_dir`` (corpus.pkl plus meta.json)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.pkl", "wb") as fh:
        pickle.dump(corpus, fh, protocol=pickle.HIGHEST_PROTOCOL)
    meta = {
        "documents": len(corpus),
        "metric_schema": list(corpus.metric_schema),
        "vulnerable_by_category": {
            name: len(ids) for name, ids in sorted(corpus.category_index.items())
        },
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(store_dir: str | Path) -> Corpus:
    store = Path(store_dir)
    pkl = store / "corpus.pkl"
    if not pkl.is_file():
        raise IngestionError(f"no corpus store at {store}")
    with open(pkl, "rb") as fh:
        corpus = pickle.load(fh)
    if not isinstance(corpus, Corpus):
        raise IngestionError(f"corpus store at {store} holds {type(corpus).__name__}")
    return corpus
