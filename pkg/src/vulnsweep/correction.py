"""Human-error correction strategies.

Four ways to catch vulnerable documents a reviewer missed:

- ``dispute``: each round, re-review the N2 singly-inspected negatives the
  classifier most disagrees with (highest decision value).
- ``dispute3``: same selection, but a doc still negative after the first
  re-review gets one more, capped at two re-checks total.
- ``two_person``: every singly-inspected negative is re-reviewed once.
- ``cormack17``: no in-flight correction; a knee in the recall curve stops
  the run, then every doc reviewed before the knee and still negative gets
  one re-review. Adapted for false-negative correction only.

Verdicts never flip from vulnerable back to non_vulnerable; re-checks target
only docs whose latest verdict is non_vulnerable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .svm import SvmModel, decision_values

CORRECTION_MODES = ("none", "two_person", "dispute", "dispute3", "cormack17")
DEFAULT_KNEE_RHO = 6.0


@dataclass(frozen=True)
class CorrectionPlan:
    """Ordered double-check queue; required_checks is 1, or 2 for dispute3."""

    double_check_queue: tuple[tuple[int, int], ...] = ()
    stop_override: bool | None = None


def dispute_select(
    model: SvmModel,
    matrix,
    candidates: list[int],
    n2: int,
) -> list[int]:
    """Top ``n2`` candidates by decision value descending, doc_id on ties.

    ``candidates`` must be singly-inspected docs whose verdict is
    non_vulnerable; the caller guarantees that.
    """
    if n2 <= 0 or not candidates:
        return []
    rows = matrix.rows if hasattr(matrix, "rows") else matrix
    ids = np.asarray(sorted(candidates))
    decisions = decision_values(model, rows[ids])
    order = np.lexsort((ids, -decisions))
    return [int(ids[k]) for k in order[:n2]]


def two_person_queue(singly_inspected_negatives: list[int]) -> list[int]:
    """Every singly-inspected negative goes back once, ascending doc_id."""
    return sorted(singly_inspected_negatives)


def knee_stop(
    recall_curve: list[tuple[int, int]],
    rho: float = DEFAULT_KNEE_RHO,
) -> tuple[bool, int | None]:
    """Detect a knee in the (reviewed, positives-found) curve.

    The knee is the interior point farthest (perpendicular distance) from
    the chord joining the first and last points. With slope_before =
    y_i / x_i and slope_after = (y_end - y_i + 1) / (x_end - x_i), the run
    should stop when slope_before / slope_after >= rho. The +1 keeps flat
    tails finite. Returns (should_stop, index into recall_curve or None).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if len(recall_curve) < 3:
        return False, None
    pts = np.asarray(recall_curve, dtype=float)
    x0, y0 = pts[0]
    x1, y1 = pts[-1]
    chord = np.hypot(x1 - x0, y1 - y0)
    if chord == 0:
        return False, None
    # perpendicular distance of each interior point to the chord
    dist = np.abs(
        (x1 - x0) * (y0 - pts[1:-1, 1]) - (x0 - pts[1:-1, 0]) * (y1 - y0)
    ) / chord
    knee = 1 + int(np.argmax(dist))
    xi, yi = pts[knee]
    if xi <= 0 or xi >= x1:
        return False, None
    slope_before = yi / xi
    slope_after = (y1 - yi + 1.0) / (x1 - xi)
    return slope_before / slope_after >= rho, knee


def plan_correction(
    mode: str,
    model: SvmModel | None,
    matrix,
    singly_inspected_negatives: list[int],
    n2: int,
) -> CorrectionPlan:
    """Build the double-check plan for one round of ``mode``.

    ``none`` and ``cormack17`` plan nothing here; cormack17 corrects only at
    its knee-triggered stop, which the engine handles.
    """
    if mode not in CORRECTION_MODES:
        raise ValueError(f"unknown correction mode {mode!r}")
    if mode in ("none", "cormack17"):
        return CorrectionPlan()
    if mode == "two_person":
        queue = two_person_queue(singly_inspected_negatives)
        return CorrectionPlan(tuple((d, 1) for d in queue))
    if model is None:
        return CorrectionPlan()
    selected = dispute_select(model, matrix, singly_inspected_negatives, n2)
    checks = 2 if mode == "dispute3" else 1
    return CorrectionPlan(tuple((d, checks) for d in selected))
