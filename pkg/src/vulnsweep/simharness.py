"""Simulation harness.

Runs repeated end-to-end review simulations against ground truth and reduces
them to the metrics used throughout reporting:

- recall   = vulnerable docs found / vulnerable docs that exist
- cost     = review events / pool size (re-reviews count, so cost can pass 1)
- estimate = R_E / true vulnerable count

plus cost-to-reach readouts at fixed recall targets and the (recall, cost)
point where the stopping rule fired. Summaries report medians and IQRs
(75th minus 25th percentile, linear interpolation) over the repeats, in
percent. Baselines review the pool in a fixed order (seeded shuffle, or
crash count descending) with no learning; the crash order never reaches
documents that never crashed, so targets beyond its coverage are n/a.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .engine import (
    ConfigError,
    SessionConfig,
    SessionState,
    new_session,
    run_round,
)
from .estimator import uniform_random_estimate
from .oracle import OracleConfig, SimulatedReviewer, VULNERABLE

RECALL_TARGETS = (60, 70, 80, 85, 90, 95, 99, 100)


@dataclass(frozen=True)
class RoundStat:
    round_index: int
    reviewed: int
    labeled: int
    positives: int
    r_e: float | None
    cost: float
    recall: float
    estimation: float | None


@dataclass(frozen=True)
class RunMetrics:
    seed: int
    rounds: tuple[RoundStat, ...]
    cost_to_reach: dict[int, float | None]
    stop_reason: str | None
    final_recall: float
    final_cost: float
    total_events: int

    @property
    def stop_recall(self) -> float:
        return self.final_recall

    @property
    def stop_cost(self) -> float:
        return self.final_cost


def run_simulation(
    corpus: Corpus,
    matrix,
    config: SessionConfig,
    oracle_config: OracleConfig,
    repeats: int,
    category: str = "All",
    targets: tuple[int, ...] = RECALL_TARGETS,
    max_rounds: int | None = None,
) -> list[RunMetrics]:
    """Run ``repeats`` full sessions, seeds config.seed+i / oracle seed+i.

    Recall is always measured against ground truth, whatever the oracle's
    error rate did to the labels.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    truth = corpus.category_index.get(category)
    if not truth:
        raise ConfigError(f"category {category!r} has no vulnerable documents")
    cap = max_rounds if max_rounds is not None else _round_cap(len(corpus), config.n1)
    runs = []
    for i in range(repeats):
        cfg = replace(config, seed=config.seed + i)
        reviewer = SimulatedReviewer(
            corpus,
            category,
            OracleConfig(oracle_config.error_rate, oracle_config.seed + i),
        )
        state = new_session(cfg, corpus)
        if cfg.estimator == "truth":
            state.true_positive_count = len(truth)
        rounds_run = 0
        while not state.stopped and rounds_run < cap:
            run_round(state, cfg, corpus, matrix, reviewer)
            rounds_run += 1
        runs.append(_collect(state, truth, cfg.seed, targets))
    return runs


def _round_cap(n_docs: int, n1: int) -> int:
    # double-checking at most doubles the reviews; the +50 absorbs
    # positive-free initial-sampling rounds on sparse corpora
    return 2 * (n_docs // max(n1, 1) + 1) + 50


def _collect(
    state: SessionState,
    truth: frozenset[int],
    seed: int,
    targets: tuple[int, ...],
) -> RunMetrics:
    n_docs = state.n_docs
    n_truth = len(truth)

    found: set[int] = set()
    found_per_event: list[int] = []
    for event in state.events:
        if event.verdict == VULNERABLE and event.doc_id not in found:
            found.add(event.doc_id)
        found_per_event.append(len(found))

    cost_to_reach: dict[int, float | None] = {}
    for target in targets:
        needed = target / 100.0 * n_truth
        cost_to_reach[target] = None
        for k, n_found in enumerate(found_per_event, start=1):
            if n_found >= needed:
                cost_to_reach[target] = k / n_docs
                break

    rounds = tuple(
        RoundStat(
            round_index=r.round_index,
            reviewed=r.total_events,
            labeled=r.labeled,
            positives=r.positives,
            r_e=r.r_e,
            cost=r.total_events / n_docs,
            recall=r.positives / n_truth,
            estimation=None if r.r_e is None else r.r_e / n_truth,
        )
        for r in state.round_trace
    )
    return RunMetrics(
        seed=seed,
        rounds=rounds,
        cost_to_reach=cost_to_reach,
        stop_reason=state.stop_reason,
        final_recall=len(state.positives) / n_truth,
        final_cost=len(state.events) / n_docs,
        total_events=len(state.events),
    )


def run_baselines(
    corpus: Corpus,
    mode: str,
    oracle_config: OracleConfig,
    repeats: int,
    category: str = "All",
    n1: int = 100,
    seed: int = 0,
    targets: tuple[int, ...] = RECALL_TARGETS,
) -> list[RunMetrics]:
    """No-learning review orders: seeded shuffle or crash-count descending.

    The crash order covers only documents with a crash history; recall
    levels beyond that coverage stay unreached (n/a in summaries). Estimates
    use the uniform-random formula, which the random order satisfies.
    """
    if mode not in ("random", "crash"):
        raise ValueError(f"unknown baseline mode {mode!r}")
    truth = corpus.category_index.get(category)
    if not truth:
        raise ConfigError(f"category {category!r} has no vulnerable documents")
    n_docs = len(corpus)
    if mode == "crash":
        crashes = np.array([d.crash_count for d in corpus.documents])
        if not np.any(crashes > 0):
            raise ConfigError("crash baseline requires crash counts")
        ids = np.flatnonzero(crashes > 0)
        fixed_order = ids[np.lexsort((ids, -crashes[ids]))]

    runs = []
    for i in range(repeats):
        reviewer = SimulatedReviewer(
            corpus,
            category,
            OracleConfig(oracle_config.error_rate, oracle_config.seed + i),
        )
        if mode == "random":
            order = np.random.default_rng(seed + i).permutation(n_docs)
        else:
            order = fixed_order
        runs.append(
            _replay_order(
                [int(d) for d in order], reviewer, truth, n_docs, seed + i, n1, targets
            )
        )
    return runs


def _replay_order(
    order: list[int],
    reviewer: SimulatedReviewer,
    truth: frozenset[int],
    n_docs: int,
    seed: int,
    n1: int,
    targets: tuple[int, ...],
) -> RunMetrics:
    n_truth = len(truth)
    found: set[int] = set()
    found_per_event: list[int] = []
    rounds: list[RoundStat] = []
    for k, doc_id in enumerate(order, start=1):
        if reviewer(doc_id, "inspect") == VULNERABLE:
            found.add(doc_id)
        found_per_event.append(len(found))
        if k % n1 == 0 or k == len(order):
            r_e = uniform_random_estimate(n_docs, k, len(found))
            rounds.append(
                RoundStat(
                    round_index=len(rounds),
                    reviewed=k,
                    labeled=k,
                    positives=len(found),
                    r_e=r_e,
                    cost=k / n_docs,
                    recall=len(found) / n_truth,
                    estimation=r_e / n_truth,
                )
            )
    cost_to_reach: dict[int, float | None] = {}
    for target in targets:
        needed = target / 100.0 * n_truth
        cost_to_reach[target] = None
        for k, n_found in enumerate(found_per_event, start=1):
            if n_found >= needed:
                cost_to_reach[target] = k / n_docs
                break
    return RunMetrics(
        seed=seed,
        rounds=tuple(rounds),
        cost_to_reach=cost_to_reach,
        stop_reason="exhausted",
        final_recall=len(found) / n_truth,
        final_cost=len(order) / n_docs,
        total_events=len(order),
    )


# -- summaries ---------------------------------------------------------------


@dataclass(frozen=True)
class SummaryCell:
    """Median and IQR in percent; None means the target was never reached."""

    median: float | None
    iqr: float | None

    def format(self) -> str:
        if self.median is None:
            return "n/a"
        if self.iqr is None:
            return f"{self.median:.0f} (n/a)"
        return f"{self.median:.0f} ({self.iqr:.0f})"


@dataclass(frozen=True)
class Summary:
    runs: int
    cost_at: dict[int, SummaryCell]
    stop_recall: SummaryCell
    stop_cost: SummaryCell
    relative_recall: SummaryCell | None = None
    relative_cost: SummaryCell | None = None


def _percentile(sorted_vals: np.ndarray, q: float) -> float:
    """Linear-interpolation percentile that tolerates +inf sentinels.

    numpy's lerp turns inf*0 into nan at exact ranks, so interpolate by hand:
    landing on an element returns it; interpolating toward +inf returns +inf.
    """
    pos = (len(sorted_vals) - 1) * q / 100.0
    lo = int(np.floor(pos))
    frac = pos - lo
    if frac == 0.0:
        return float(sorted_vals[lo])
    a, b = float(sorted_vals[lo]), float(sorted_vals[lo + 1])
    if np.isinf(b):
        return b
    return a + (b - a) * frac


def _cell(values: list[float | None], scale: float = 100.0) -> SummaryCell:
    filled = np.sort(
        np.array([np.inf if v is None else v * scale for v in values], dtype=float)
    )
    median = _percentile(filled, 50)
    if not np.isfinite(median):
        return SummaryCell(None, None)
    p75 = _percentile(filled, 75)
    p25 = _percentile(filled, 25)
    return SummaryCell(median, p75 - p25 if np.isfinite(p75) else None)


def summarize(
    runs: list[RunMetrics],
    targets: tuple[int, ...] = RECALL_TARGETS,
    baseline: list[RunMetrics] | None = None,
) -> Summary:
    """Reduce runs to median (IQR) percent cells, Table-style.

    With a baseline run set, relative recall/cost are each run's final value
    divided by the baseline's median final value, again median (IQR).
    """
    if not runs:
        raise ValueError("no runs to summarize")
    cost_at = {
        t: _cell([r.cost_to_reach.get(t) for r in runs]) for t in targets
    }
    stop_recall = _cell([r.final_recall for r in runs])
    stop_cost = _cell([r.final_cost for r in runs])
    relative_recall = relative_cost = None
    if baseline:
        base_recall = float(np.percentile([b.final_recall for b in baseline], 50))
        base_cost = float(np.percentile([b.final_cost for b in baseline], 50))
        if base_recall > 0:
            relative_recall = _cell(
                [r.final_recall / base_recall for r in runs]
            )
        if base_cost > 0:
            relative_cost = _cell([r.final_cost / base_cost for r in runs])
    return Summary(
        runs=len(runs),
        cost_at=cost_at,
        stop_recall=stop_recall,
        stop_cost=stop_cost,
        relative_recall=relative_recall,
        relative_cost=relative_cost,
    )


# -- persistence and plotting ------------------------------------------------


def write_run_csv(run: RunMetrics, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "reviewed", "labeled", "positives", "r_e", "cost", "recall", "estimation"]
        )
        for r in run.rounds:
            writer.writerow(
                [
                    r.round_index,
                    r.reviewed,
                    r.labeled,
                    r.positives,
                    "" if r.r_e is None else f"{r.r_e:.4f}",
                    f"{r.cost:.6f}",
                    f"{r.recall:.6f}",
                    "" if r.estimation is None else f"{r.estimation:.6f}",
                ]
            )


def write_runs(runs: list[RunMetrics], out_dir: str | Path) -> None:
    """Write per-run CSVs plus metrics.json with the reduced readouts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, run in enumerate(runs):
        write_run_csv(run, out / f"run_{i:03d}.csv")
    payload = [
        {
            "seed": run.seed,
            "cost_to_reach": {str(t): c for t, c in run.cost_to_reach.items()},
            "stop_reason": run.stop_reason,
            "final_recall": run.final_recall,
            "final_cost": run.final_cost,
            "total_events": run.total_events,
        }
        for run in runs
    ]
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_metrics(run_dir: str | Path) -> list[RunMetrics]:
    """Load the reduced form written by write_runs (rounds omitted)."""
    path = Path(run_dir) / "metrics.json"
    raw = json.loads(path.read_text(encoding="utf-8"))
    return [
        RunMetrics(
            seed=entry["seed"],
            rounds=(),
            cost_to_reach={int(t): c for t, c in entry["cost_to_reach"].items()},
            stop_reason=entry["stop_reason"],
            final_recall=entry["final_recall"],
            final_cost=entry["final_cost"],
            total_events=entry["total_events"],
        )
        for entry in raw
    ]


def write_summary_csv(
    summary: Summary, path: str | Path, targets: tuple[int, ...] = RECALL_TARGETS
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["readout", "median", "iqr"])
        for t in targets:
            cell = summary.cost_at[t]
            writer.writerow(
                [
                    f"cost_at_{t}",
                    "n/a" if cell.median is None else f"{cell.median:.1f}",
                    "n/a" if cell.iqr is None else f"{cell.iqr:.1f}",
                ]
            )
        for name, cell in (
            ("stop_recall", summary.stop_recall),
            ("stop_cost", summary.stop_cost),
            ("relative_recall", summary.relative_recall),
            ("relative_cost", summary.relative_cost),
        ):
            if cell is None:
                continue
            writer.writerow(
                [
                    name,
                    "n/a" if cell.median is None else f"{cell.median:.1f}",
                    "n/a" if cell.iqr is None else f"{cell.iqr:.1f}",
                ]
            )


def svg_line_plot(
    series: dict[str, tuple[list[float], list[float]]],
    path: str | Path,
    x_label: str = "cost",
    y_label: str = "estimation",
    width: int = 640,
    height: int = 400,
) -> None:
    """Minimal dependency-free SVG polyline chart for run series."""
    pad = 50
    xs = [x for pts in series.values() for x in pts[0]]
    ys = [y for pts in series.values() for y in pts[1]]
    if not xs:
        xs = ys = [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys + [0.0]), max(ys + [1.0])
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x: float) -> float:
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def sy(y: float) -> float:
        return height - pad - (y - y_lo) / y_span * (height - 2 * pad)

    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
        f'<text x="{width/2:.0f}" y="{height-12}" text-anchor="middle" font-size="13">{x_label}</text>',
        f'<text x="14" y="{height/2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {height/2:.0f})">{y_label}</text>',
    ]
    for k, (name, (px, py)) in enumerate(sorted(series.items())):
        color = palette[k % len(palette)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(px, py))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width-pad-150}" y="{pad + 16*k}" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
