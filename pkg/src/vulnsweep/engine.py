"""Active-learning review loop.

One round means: consume the review queue through the verdict source, retrain
on everything labeled so far (plus presumptive negatives, with aggressive
undersampling once enough positives exist), let the configured correction
strategy request double checks, estimate how many vulnerable documents remain,
evaluate the stopping rule, and refill the queue with the next batch to
review. Sessions are deterministic for a fixed config, corpus, and verdict
stream, and serializable at any round boundary.

Query strategy: uncertainty sampling (smallest |decision|) until the session
has seen n3 positives, then certainty sampling (largest decision) for the
rest of the run. The switch latches and never reverts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import svm
from .correction import (
    CORRECTION_MODES,
    knee_stop,
    plan_correction,
)
from .corpus import Corpus
from .oracle import NON_VULNERABLE, VERDICTS, VULNERABLE

# ranking and estimation only need a few digits of the optimum;
# tighter solves cost passes without moving any ordering
RANKING_TOL = 1e-4

INSPECT = "inspect"
DOUBLE_CHECK = "double_check"
PURPOSES = (INSPECT, DOUBLE_CHECK)

FEATURE_MODES = ("text", "hybrid", "metrics")
SAMPLING_MODES = ("random", "crash")
ESTIMATORS = ("semi", "uniform", "truth")

# verdict callback: (doc_id, purpose) -> "vulnerable" | "non_vulnerable"
VerdictSource = Callable[[int, str], str]


class ConfigError(ValueError):
    """Raised for out-of-range or inconsistent session configuration."""


class ExhaustedError(Exception):
    """Raised when initial sampling finds no unlabeled documents."""


class StateError(Exception):
    """Raised when an operation runs against an unready session."""


@dataclass(frozen=True)
class SessionConfig:
    """Knobs for one review session.

    ``n1`` is the review batch size; ``alpha`` sets the double-check budget
    N2 = floor(alpha * n1); ``n3`` is both the certainty-switch and the
    undersampling threshold; ``t_rec`` is the target recall the stopping
    rule aims for. ``estimator`` picks how R_E is produced: "semi" (model
    based), "uniform" (|E|*|L_R|/|L|, for random-sampling baselines) or
    "truth" (injected known total, simulation only). ``stop_rule=False``
    disables the stop evaluation entirely so a session sweeps the whole
    pool; estimation-trajectory experiments use this.
    """

    n1: int = 100
    alpha: float = 0.5
    n3: int = 10
    t_rec: float = 0.95
    feature_mode: str = "text"
    sampling_mode: str = "random"
    correction_mode: str = "none"
    estimator: str = "semi"
    rho: float = 6.0
    svm_c: float = 1.0
    presumptive_cap: float = 0.10
    semi_reset: bool = True
    stop_rule: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        problems = []
        if self.n1 < 1:
            problems.append("n1 must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append("alpha must be in [0, 1]")
        if self.n3 < 1:
            problems.append("n3 must be >= 1")
        if not 0.0 < self.t_rec <= 1.0:
            problems.append("t_rec must be in (0, 1]")
        if self.feature_mode not in FEATURE_MODES:
            problems.append(f"feature_mode must be one of {FEATURE_MODES}")
        if self.sampling_mode not in SAMPLING_MODES:
            problems.append(f"sampling_mode must be one of {SAMPLING_MODES}")
        if self.correction_mode not in CORRECTION_MODES:
            problems.append(f"correction_mode must be one of {CORRECTION_MODES}")
        if self.estimator not in ESTIMATORS:
            problems.append(f"estimator must be one of {ESTIMATORS}")
        if self.rho <= 0:
            problems.append("rho must be positive")
        if self.svm_c <= 0:
            problems.append("svm_c must be positive")
        if not 0.0 <= self.presumptive_cap <= 1.0:
            problems.append("presumptive_cap must be in [0, 1]")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def n2(self) -> int:
        return int(self.alpha * self.n1)


@dataclass(frozen=True)
class ReviewEvent:
    seq: int
    doc_id: int
    reviewer: str
    verdict: str
    purpose: str
    round_index: int


@dataclass(frozen=True)
class QueueItem:
    doc_id: int
    purpose: str


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    labeled: int
    positives: int
    r_e: float | None
    stopped: bool
    stop_reason: str | None
    new_events: int
    total_events: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingSet:
    x: object  # sparse rows aligned with doc_ids
    y: np.ndarray
    doc_ids: np.ndarray
    undersampled: bool


class SessionState:
    """Mutable review-session state.

    The append-only ``events`` list is the source of truth; L (labeled) and
    L_R (current positives) are maintained incrementally from it. ``queue``
    holds items awaiting verdicts, each with a purpose.
    """

    def __init__(self, config: SessionConfig, n_docs: int):
        if n_docs < 1:
            raise ConfigError("empty corpus")
        self.config = config
        self.n_docs = n_docs
        self.events: list[ReviewEvent] = []
        self.doc_events: dict[int, list[ReviewEvent]] = {}
        self.positives: set[int] = set()
        self.queue: list[QueueItem] = []
        self.model: svm.SvmModel | None = None
        self.round_index = 0
        self.certainty_mode = False
        self.stopped = False
        self.stop_reason: str | None = None
        self.pending_stop = False
        self.last_estimate: float | None = None
        self.true_positive_count: int | None = None
        self.recall_curve: list[tuple[int, int]] = [(0, 0)]
        self.round_trace: list[RoundReport] = []
        self.rng = np.random.default_rng(config.seed)
        self._labeled_mask = np.zeros(n_docs, dtype=bool)

    # -- label bookkeeping ------------------------------------------------

    def labeled_count(self) -> int:
        return len(self.doc_events)

    def labeled_ids(self) -> list[int]:
        return sorted(self.doc_events)

    def unlabeled_ids(self) -> np.ndarray:
        return np.flatnonzero(~self._labeled_mask)

    def next_reviewer(self, doc_id: int) -> str:
        return f"r{len(self.doc_events.get(doc_id, ()))}"

    def record_event(
        self, doc_id: int, reviewer: str, verdict: str, purpose: str
    ) -> ReviewEvent:
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        if purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {purpose!r}")
        if not 0 <= doc_id < self.n_docs:
            raise ValueError(f"doc_id {doc_id} out of range")
        event = ReviewEvent(
            seq=len(self.events) + 1,
            doc_id=doc_id,
            reviewer=reviewer,
            verdict=verdict,
            purpose=purpose,
            round_index=self.round_index,
        )
        self.events.append(event)
        self.doc_events.setdefault(doc_id, []).append(event)
        self._labeled_mask[doc_id] = True
        if verdict == VULNERABLE:
            self.positives.add(doc_id)
        return event

    def singly_inspected_negatives(self) -> list[int]:
        return sorted(
            d
            for d, evs in self.doc_events.items()
            if len(evs) == 1 and d not in self.positives
        )

    def cost(self) -> float:
        return len(self.events) / self.n_docs

    def estimated_recall(self) -> float | None:
        if not self.positives:
            return None
        if self.last_estimate is None:
            return None
        return len(self.positives) / max(self.last_estimate, float(len(self.positives)))


def new_session(config: SessionConfig, corpus: Corpus) -> SessionState:
    """Create a session with its first review queue materialized."""
    state = SessionState(config, len(corpus))
    state.queue = initial_sample(state, config, corpus)
    return state


# -- the four loop operations ---------------------------------------------


def initial_sample(
    state: SessionState, config: SessionConfig, corpus: Corpus
) -> list[QueueItem]:
    """First batch while no positive is known yet.

    random mode draws n1 unlabeled docs uniformly without replacement;
    crash mode takes the n1 unlabeled docs with the highest crash counts
    (ties by ascending doc_id).
    """
    if state.positives:
        raise StateError("initial sampling only runs while no positive is known")
    unlabeled = state.unlabeled_ids()
    if unlabeled.size == 0:
        raise ExhaustedError("no unlabeled documents remain")
    take = min(config.n1, unlabeled.size)
    if config.sampling_mode == "crash":
        crashes = np.array([corpus.doc(int(d)).crash_count for d in unlabeled])
        order = np.lexsort((unlabeled, -crashes))
        chosen = [int(unlabeled[k]) for k in order[:take]]
    else:
        chosen = [int(d) for d in state.rng.choice(unlabeled, size=take, replace=False)]
    return [QueueItem(d, INSPECT) for d in chosen]


def assemble_training_set(
    state: SessionState,
    matrix,
    config: SessionConfig,
    rng: np.random.Generator,
) -> TrainingSet:
    """Rows and labels for this round's model.

    Positives are L_R. Negatives are the labeled negatives plus |P|
    presumptive negatives drawn uniformly from the unlabeled pool, with
    |P| = |L| capped at presumptive_cap * |E|. Once |L_R| >= n3, a
    provisional balanced model ranks the negatives and those closest to the
    vulnerable side are discarded until |L_R| negatives remain.
    """
    if not state.positives:
        raise StateError("training requires at least one positive")
    rows = matrix.rows if hasattr(matrix, "rows") else matrix
    pos = sorted(state.positives)
    labeled_negs = sorted(set(state.doc_events) - state.positives)
    unlabeled = state.unlabeled_ids()
    p_size = min(
        len(state.doc_events),
        int(config.presumptive_cap * state.n_docs),
        int(unlabeled.size),
    )
    presumptive = (
        [int(d) for d in rng.choice(unlabeled, size=p_size, replace=False)]
        if p_size > 0
        else []
    )
    negs = sorted(set(labeled_negs) | set(presumptive))
    if not negs:
        raise StateError("no negative rows available for training")

    undersampled = False
    if len(pos) >= config.n3 and len(negs) > len(pos):
        doc_ids = np.asarray(pos + negs)
        y = np.concatenate([np.ones(len(pos)), -np.ones(len(negs))])
        provisional = svm.train(
            rows[doc_ids], y, c=config.svm_c, balanced=True, seed=config.seed,
            tol=RANKING_TOL,
        )
        neg_ids = np.asarray(negs)
        decisions = svm.decision_values(provisional, rows[neg_ids])
        # discard negatives closest to the vulnerable side first
        order = np.lexsort((neg_ids, -decisions))
        keep = order[len(negs) - len(pos):]
        negs = sorted(int(neg_ids[k]) for k in keep)
        undersampled = True

    doc_ids = np.asarray(pos + negs)
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(negs))])
    return TrainingSet(x=rows[doc_ids], y=y, doc_ids=doc_ids, undersampled=undersampled)


def query(state: SessionState, matrix, config: SessionConfig) -> list[QueueItem]:
    """Next n1 unlabeled docs under the session's current strategy."""
    if state.model is None:
        raise StateError("query requires a trained model")
    rows = matrix.rows if hasattr(matrix, "rows") else matrix
    unlabeled = state.unlabeled_ids()
    if unlabeled.size == 0:
        return []
    decisions = svm.decision_values(state.model, rows[unlabeled])
    if state.certainty_mode:
        order = np.lexsort((unlabeled, -decisions))
    else:
        order = np.lexsort((unlabeled, np.abs(decisions)))
    take = min(config.n1, unlabeled.size)
    return [QueueItem(int(unlabeled[k]), INSPECT) for k in order[:take]]


def stop_satisfied(labeled_positives: int, t_rec: float, r_e: float) -> bool:
    """Target-recall stop test: found positives cover t_rec of the estimate."""
    return labeled_positives >= t_rec * r_e


# -- round driver -----------------------------------------------------------


def run_round(
    state: SessionState,
    config: SessionConfig,
    corpus: Corpus,
    matrix,
    verdict_source: VerdictSource,
) -> RoundReport:
    """Execute one full loop round against ``verdict_source``.

    A verdict-source exception propagates with the unconsumed queue intact,
    so the session resumes at the failed item.
    """
    if state.stopped:
        raise StateError("session already stopped")
    start_events = len(state.events)

    _consume_queue(state, verdict_source)

    # two-person re-review is label-driven and applies from round 0 onward
    if config.correction_mode == "two_person":
        for doc in state.singly_inspected_negatives():
            _apply_verdict(state, doc, verdict_source, DOUBLE_CHECK)

    if not state.positives:
        try:
            state.queue = initial_sample(state, config, corpus)
        except ExhaustedError:
            state.stopped = True
            state.stop_reason = "exhausted"
        state.recall_curve.append((len(state.events), 0))
        return _close_round(state, None, start_events)

    train_set = None
    try:
        train_set = assemble_training_set(state, matrix, config, state.rng)
    except StateError:
        pass  # no negatives anywhere; keep the previous model
    if train_set is not None:
        state.model = svm.train(
            train_set.x, train_set.y, c=config.svm_c, balanced=True, seed=config.seed,
            tol=RANKING_TOL,
        )

    if config.correction_mode in ("dispute", "dispute3") and state.model is not None:
        plan = plan_correction(
            config.correction_mode,
            state.model,
            matrix,
            state.singly_inspected_negatives(),
            config.n2,
        )
        for doc_id, checks in plan.double_check_queue:
            for _ in range(checks):
                if doc_id in state.positives:
                    break
                _apply_verdict(state, doc_id, verdict_source, DOUBLE_CHECK)

    state.recall_curve.append((len(state.events), len(state.positives)))

    r_e = _estimate(state, config, matrix)
    state.last_estimate = r_e

    if not config.stop_rule:
        pass
    elif config.correction_mode == "cormack17":
        should_stop, knee = knee_stop(state.recall_curve, config.rho)
        if should_stop and knee is not None:
            _knee_sweep(state, knee, verdict_source)
            state.stopped = True
            state.stop_reason = "knee"
    elif stop_satisfied(len(state.positives), config.t_rec, r_e):
        state.stopped = True
        state.stop_reason = "target_recall"

    if not state.stopped:
        if len(state.positives) >= config.n3:
            state.certainty_mode = True
        state.queue = query(state, matrix, config)
        if not state.queue:
            state.stopped = True
            state.stop_reason = "exhausted"

    return _close_round(state, r_e, start_events)


def _consume_queue(state: SessionState, verdict_source: VerdictSource) -> None:
    while state.queue:
        item = state.queue[0]
        already_positive = item.doc_id in state.positives
        skip = (
            (item.purpose == INSPECT and item.doc_id in state.doc_events)
            or (item.purpose == DOUBLE_CHECK and already_positive)
        )
        if not skip:
            _apply_verdict(state, item.doc_id, verdict_source, item.purpose)
        state.queue.pop(0)


def _apply_verdict(
    state: SessionState, doc_id: int, verdict_source: VerdictSource, purpose: str
) -> None:
    verdict = verdict_source(doc_id, purpose)
    state.record_event(doc_id, state.next_reviewer(doc_id), verdict, purpose)


def _estimate(state: SessionState, config: SessionConfig, matrix) -> float:
    from .estimator import semi_estimate, uniform_random_estimate

    n_pos = len(state.positives)
    if config.estimator == "uniform":
        return uniform_random_estimate(state.n_docs, state.labeled_count(), n_pos)
    if config.estimator == "truth":
        if state.true_positive_count is None:
            raise ConfigError("estimator 'truth' requires true_positive_count")
        return float(state.true_positive_count)
    if state.model is None:
        return float(n_pos)
    trace = semi_estimate(
        state.model,
        matrix,
        state.doc_events.keys(),
        state.positives,
        reset_unlabeled=config.semi_reset,
    )
    return trace.r_e


def _knee_sweep(
    state: SessionState, knee: int, verdict_source: VerdictSource
) -> None:
    """One terminal re-review of pre-knee docs still labeled negative."""
    knee_x = state.recall_curve[knee][0]
    pre_knee = sorted(
        d
        for d, evs in state.doc_events.items()
        if evs[0].seq <= knee_x and d not in state.positives
    )
    for doc_id in pre_knee:
        _apply_verdict(state, doc_id, verdict_source, DOUBLE_CHECK)


def _close_round(
    state: SessionState, r_e: float | None, start_events: int
) -> RoundReport:
    report = RoundReport(
        round_index=state.round_index,
        labeled=state.labeled_count(),
        positives=len(state.positives),
        r_e=r_e,
        stopped=state.stopped,
        stop_reason=state.stop_reason,
        new_events=len(state.events) - start_events,
        total_events=len(state.events),
    )
    state.round_trace.append(report)
    state.round_index += 1
    return report


# -- interactive sessions -----------------------------------------------------


def advance_live_round(
    state: SessionState,
    config: SessionConfig,
    corpus: Corpus,
    matrix,
) -> RoundReport:
    """Round pipeline for sessions reviewed by humans over the service.

    Runs when the queue has drained: train, enqueue double checks for human
    reviewers, estimate, evaluate the stop rule, refill. Unlike run_round the
    double-check verdicts arrive later, so the estimate only sees labels
    submitted so far. A knee-triggered stop first enqueues its re-review
    sweep and finalizes once those verdicts are in (pending_stop).
    """
    if state.stopped:
        raise StateError("session already stopped")
    if state.queue:
        raise StateError("round advances only when the queue is empty")
    start_events = len(state.events)

    if state.pending_stop:
        state.stopped = True
        state.stop_reason = "knee"
        return _close_round(state, state.last_estimate, start_events)

    dc_items: list[QueueItem] = []
    if config.correction_mode == "two_person":
        dc_items = [
            QueueItem(d, DOUBLE_CHECK) for d in state.singly_inspected_negatives()
        ]

    if not state.positives:
        try:
            state.queue = dc_items + initial_sample(state, config, corpus)
        except ExhaustedError:
            state.queue = dc_items
            if not state.queue:
                state.stopped = True
                state.stop_reason = "exhausted"
        state.recall_curve.append((len(state.events), 0))
        return _close_round(state, None, start_events)

    try:
        train_set = assemble_training_set(state, matrix, config, state.rng)
        state.model = svm.train(
            train_set.x, train_set.y, c=config.svm_c, balanced=True, seed=config.seed,
            tol=RANKING_TOL,
        )
    except StateError:
        pass  # no negatives anywhere; keep the previous model

    if config.correction_mode in ("dispute", "dispute3") and state.model is not None:
        plan = plan_correction(
            config.correction_mode,
            state.model,
            matrix,
            state.singly_inspected_negatives(),
            config.n2,
        )
        dc_items = [QueueItem(d, DOUBLE_CHECK) for d, _ in plan.double_check_queue]

    state.recall_curve.append((len(state.events), len(state.positives)))

    r_e = _estimate(state, config, matrix)
    state.last_estimate = r_e

    if not config.stop_rule:
        pass
    elif config.correction_mode == "cormack17":
        should_stop, knee = knee_stop(state.recall_curve, config.rho)
        if should_stop and knee is not None:
            knee_x = state.recall_curve[knee][0]
            sweep = sorted(
                d
                for d, evs in state.doc_events.items()
                if evs[0].seq <= knee_x and d not in state.positives
            )
            state.queue = [QueueItem(d, DOUBLE_CHECK) for d in sweep]
            state.pending_stop = True
            if not state.queue:
                state.stopped = True
                state.stop_reason = "knee"
            return _close_round(state, r_e, start_events)
    elif stop_satisfied(len(state.positives), config.t_rec, r_e):
        state.stopped = True
        state.stop_reason = "target_recall"

    if not state.stopped:
        if len(state.positives) >= config.n3:
            state.certainty_mode = True
        state.queue = dc_items + query(state, matrix, config)
        if not state.queue:
            state.stopped = True
            state.stop_reason = "exhausted"

    return _close_round(state, r_e, start_events)


def live_followup_items(
    state: SessionState, config: SessionConfig, event: ReviewEvent
) -> list[QueueItem]:
    """Extra queue items triggered by one live verdict.

    dispute3 requests a second re-review when the first one still says
    non_vulnerable (two review events so far, cap at two re-checks).
    """
    if (
        config.correction_mode == "dispute3"
        and event.purpose == DOUBLE_CHECK
        and event.verdict == NON_VULNERABLE
        and len(state.doc_events[event.doc_id]) == 2
    ):
        return [QueueItem(event.doc_id, DOUBLE_CHECK)]
    return []


# -- persistence ------------------------------------------------------------


def snapshot_state(state: SessionState) -> dict:
    """JSON-serializable snapshot capturing the full session."""
    return {
        "config": asdict(state.config),
        "n_docs": state.n_docs,
        "events": [asdict(e) for e in state.events],
        "queue": [asdict(q) for q in state.queue],
        "round_index": state.round_index,
        "certainty_mode": state.certainty_mode,
        "stopped": state.stopped,
        "stop_reason": state.stop_reason,
        "pending_stop": state.pending_stop,
        "last_estimate": state.last_estimate,
        "true_positive_count": state.true_positive_count,
        "recall_curve": [list(p) for p in state.recall_curve],
        "round_trace": [r.to_dict() for r in state.round_trace],
        "rng_state": state.rng.bit_generator.state,
        "model": svm.model_to_dict(state.model) if state.model else None,
    }


def restore_state(snapshot: dict) -> SessionState:
    config = SessionConfig(**snapshot["config"])
    state = SessionState(config, snapshot["n_docs"])
    for raw in snapshot["events"]:
        event = ReviewEvent(**raw)
        state.events.append(event)
        state.doc_events.setdefault(event.doc_id, []).append(event)
        state._labeled_mask[event.doc_id] = True
        if event.verdict == VULNERABLE:
            state.positives.add(event.doc_id)
    state.queue = [QueueItem(**q) for q in snapshot["queue"]]
    state.round_index = snapshot["round_index"]
    state.certainty_mode = snapshot["certainty_mode"]
    state.stopped = snapshot["stopped"]
    state.stop_reason = snapshot["stop_reason"]
    state.pending_stop = snapshot.get("pending_stop", False)
    state.last_estimate = snapshot["last_estimate"]
    state.true_positive_count = snapshot["true_positive_count"]
    state.recall_curve = [tuple(p) for p in snapshot["recall_curve"]]
    state.round_trace = [RoundReport(**r) for r in snapshot["round_trace"]]
    state.rng.bit_generator.state = snapshot["rng_state"]
    if snapshot["model"] is not None:
        state.model = svm.model_from_dict(snapshot["model"])
    return state
