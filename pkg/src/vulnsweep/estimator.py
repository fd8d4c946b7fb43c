"""Remaining-positives estimation.

The main estimator fits a one-feature logistic curve to the classifier's
decision values and lets it vote temporary positive labels onto unlabeled
documents until the implied total stops changing. The resulting R_E is the
estimated number of vulnerable documents in the whole pool, used by the
stopping rule (stop when |L_R| >= T_rec * R_E).

A uniform-random estimate (|E| * |L_R| / |L|) is also provided; it is only
statistically meaningful when the labeled set was drawn uniformly, which the
random-sampling baseline satisfies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .svm import SvmModel, decision_values

ITERATION_CAP = 50


class DegenerateFitError(Exception):
    """Raised when the 1-D logistic fit has no usable signal."""


@dataclass(frozen=True)
class LogisticCurve:
    """p(d) = sigmoid(slope * d + intercept)."""

    slope: float
    intercept: float

    def __call__(self, d: np.ndarray | float) -> np.ndarray | float:
        z = np.clip(self.slope * np.asarray(d, dtype=float) + self.intercept, -500, 500)
        return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class EstimatorTrace:
    """R_E per outer pass plus the final value and convergence flag."""

    iterations: tuple[float, ...]
    r_e: float
    converged: bool


def logistic_fit_1d(d: np.ndarray, y: np.ndarray, *, tol: float = 1e-6,
                    max_iterations: int = 1000) -> LogisticCurve:
    """Fit p(d) = sigmoid(a*d + c) by damped Newton.

    The objective is the summed log loss plus a unit L2 penalty on both
    coefficients, slope and intercept alike. Penalizing the intercept
    matters: a free intercept pins the total fitted mass to the positive
    count, which starves the temporary-label walk whenever positives are
    scarce, while the shrunk intercept leaves a remainder of probability
    mass spread over the pool. The penalty also keeps the optimum finite on
    separable data, so probabilities stay smooth over the decision range
    instead of collapsing to a step. Requires both classes in y and at
    least two distinct d values.
    """
    d = np.asarray(d, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if d.shape != y.shape:
        raise ValueError("d/y length mismatch")
    n_pos = float(np.sum(y))
    if n_pos == 0 or n_pos == y.shape[0]:
        raise DegenerateFitError("single-class labels")
    if np.all(d == d[0]):
        raise DegenerateFitError("constant decision values")

    def objective(a: float, c: float) -> float:
        z = np.clip(a * d + c, -500, 500)
        # log(1+exp(-z)) for y=1 and log(1+exp(z)) for y=0, evaluated stably
        losses = np.logaddexp(0.0, z) - y * z
        return 0.5 * (a * a + c * c) + float(losses.sum())

    mean = n_pos / y.shape[0]
    a = 0.0
    c = float(np.log(mean / (1.0 - mean)))
    value = objective(a, c)
    for _ in range(max_iterations):
        z = np.clip(a * d + c, -500, 500)
        p = 1.0 / (1.0 + np.exp(-z))
        resid = p - y
        grad = np.array([a + resid @ d, c + resid.sum()])
        if np.linalg.norm(grad) < tol:
            break
        w = p * (1.0 - p)
        h_aa = (w * d) @ d + 1.0
        h_ac = w @ d
        h_cc = w.sum() + 1.0
        det = h_aa * h_cc - h_ac * h_ac
        if det <= 0 or not np.isfinite(det):
            raise DegenerateFitError("singular hessian")
        step_a = (h_cc * grad[0] - h_ac * grad[1]) / det
        step_c = (h_aa * grad[1] - h_ac * grad[0]) / det
        cap = max(abs(step_a), abs(step_c))
        if cap > 20.0:
            step_a *= 20.0 / cap
            step_c *= 20.0 / cap
        scale = 1.0
        candidate = objective(a - step_a, c - step_c)
        for _ in range(30):
            if candidate <= value:
                break
            scale *= 0.5
            candidate = objective(a - scale * step_a, c - scale * step_c)
        a -= scale * step_a
        c -= scale * step_c
        value = candidate
    return LogisticCurve(slope=float(a), intercept=float(c))


def temporary_label(
    probabilities: np.ndarray,
    unlabeled_ids: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """Assign temporary positive labels to unlabeled docs, mutating ``y``.

    Walk the unlabeled docs in descending probability order (ties by
    ascending doc_id), accumulating probability mass into ``count``. Each
    time count reaches the current integer target, the first doc of the
    window that got it there turns positive, the target grows by one and the
    window clears; count itself keeps accumulating across windows.
    """
    probabilities = np.asarray(probabilities, dtype=float).ravel()
    unlabeled_ids = np.asarray(unlabeled_ids)
    order = np.lexsort((unlabeled_ids, -probabilities))
    count = 0.0
    target = 1.0
    window_first = -1
    for k in order:
        if window_first < 0:
            window_first = int(unlabeled_ids[k])
        count += probabilities[k]
        if count >= target:
            y[window_first] = 1.0
            target += 1.0
            window_first = -1
    return y


def semi_estimate(
    model: SvmModel,
    matrix,
    labeled: Iterable[int],
    positives: Iterable[int],
    *,
    iteration_cap: int = ITERATION_CAP,
    reset_unlabeled: bool = True,
) -> EstimatorTrace:
    """Estimate the total number of vulnerable docs in the pool.

    ``labeled``/``positives`` are doc_id collections with positives a subset
    of labeled and at least one positive. Degenerate fits (constant decision
    values, or temporary labels saturating the pool) yield R_E = |L_R| with
    converged=False rather than an error.
    """
    rows = matrix.rows if hasattr(matrix, "rows") else matrix
    d = decision_values(model, rows)
    n = d.shape[0]
    labeled_mask = np.zeros(n, dtype=bool)
    labeled_mask[np.fromiter(labeled, dtype=int)] = True
    pos_ids = np.fromiter(positives, dtype=int)
    if pos_ids.size == 0:
        raise ValueError("at least one positive required")
    n_positive = float(pos_ids.size)

    y = np.zeros(n)
    y[pos_ids] = 1.0
    unlabeled_ids = np.flatnonzero(~labeled_mask)

    iterations: list[float] = []
    r_e = n_positive
    converged = False
    for _ in range(iteration_cap):
        r_e_last = r_e
        try:
            curve = logistic_fit_1d(d, y)
        except DegenerateFitError:
            return EstimatorTrace(tuple(iterations), n_positive, False)
        if reset_unlabeled:
            y[unlabeled_ids] = 0.0
        temporary_label(curve(d[unlabeled_ids]), unlabeled_ids, y)
        r_e = float(y.sum())
        iterations.append(r_e)
        if r_e == r_e_last:
            converged = True
            break
    return EstimatorTrace(tuple(iterations), r_e, converged)


def uniform_random_estimate(pool_size: int, labeled: int, positives: int) -> float:
    """R_E = |E| * |L_R| / |L| for uniformly drawn labeled sets."""
    if labeled < 1:
        raise ValueError("at least one labeled doc required")
    return pool_size * positives / labeled
