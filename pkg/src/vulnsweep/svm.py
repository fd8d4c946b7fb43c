"""Deterministic soft-margin linear SVM.

Minimizes

    0.5 * (||w||^2 + b^2) + C * sum_i kappa_i * max(0, 1 - y_i (w . x_i + b))

where kappa_i is the class weight of row i. The bias is an implicit
constant-1 feature, so it is regularized along with w; on the data this
package sees the difference from an unregularized bias is negligible and the
approximation keeps the dual box-constrained.

Solver: dual coordinate descent, visiting rows in a fresh seed-derived
permutation every pass; a fixed cyclic order stalls badly once the bias
couples all coordinates. Rows whose multiplier sits at a box bound with a
gradient pointing further out are shrunk from the sweep and revisited only
when progress stalls. Convergence is declared when the duality gap drops
below ``tol`` relative to the primal objective, or after ``max_passes``
passes. The gap bounds the distance from the optimum directly, so a pass
that merely fails to improve the primal cannot end training early, and a
wrongly shrunk row cannot fake convergence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class TrainingError(Exception):
    """Raised for unusable training inputs."""


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray
    bias: float
    c: float
    class_weights: tuple[float, float]
    n_passes: int = 0
    objective: float = float("nan")

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])


def balanced_class_weights(y: np.ndarray) -> tuple[float, float]:
    """Weights (w_pos, w_neg) with w_pos*n_pos = w_neg*n_neg = n/2."""
    n = y.shape[0]
    n_pos = int(np.sum(y > 0))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("both classes required")
    return n / (2.0 * n_pos), n / (2.0 * n_neg)


def _as_csr(x: sp.spmatrix | np.ndarray) -> sp.csr_matrix:
    if sp.issparse(x):
        return x.tocsr()
    return sp.csr_matrix(np.atleast_2d(np.asarray(x, dtype=float)))


def train(
    x: sp.spmatrix | np.ndarray,
    y: np.ndarray | list[int],
    c: float = 1.0,
    balanced: bool = True,
    seed: int = 0,
    class_weights: tuple[float, float] | None = None,
    tol: float = 1e-6,
    max_passes: int = 1000,
) -> SvmModel:
    """Train on rows ``x`` with labels ``y`` in {+1, -1}.

    ``class_weights`` overrides ``balanced`` when given. Deterministic for
    fixed inputs and seed.
    """
    xm = _as_csr(x)
    yv = np.asarray(y, dtype=float).ravel()
    if xm.shape[0] != yv.shape[0]:
        raise TrainingError("row/label count mismatch")
    if not np.all(np.isin(yv, (-1.0, 1.0))):
        raise TrainingError("labels must be +1 or -1")
    if not np.all(np.isfinite(xm.data)):
        raise TrainingError("non-finite feature value")
    if c <= 0:
        raise TrainingError("C must be positive")

    if class_weights is not None:
        w_pos, w_neg = class_weights
        if w_pos <= 0 or w_neg <= 0:
            raise TrainingError("class weights must be positive")
        if not (np.any(yv > 0) and np.any(yv < 0)):
            raise TrainingError("both classes required")
    elif balanced:
        w_pos, w_neg = balanced_class_weights(yv)
    else:
        if not (np.any(yv > 0) and np.any(yv < 0)):
            raise TrainingError("both classes required")
        w_pos = w_neg = 1.0

    n, dim = xm.shape
    kappa = np.where(yv > 0, w_pos, w_neg)
    upper = c * kappa

    indptr, indices, data = xm.indptr, xm.indices, xm.data
    # diagonal of the Gram matrix incl. the implicit bias feature
    q_diag = np.asarray(xm.multiply(xm).sum(axis=1)).ravel() + 1.0

    shuffler = np.random.default_rng(seed)
    alpha = np.zeros(n)
    w = np.zeros(dim)
    b = 0.0

    active = np.arange(n)
    thr_hi = np.inf  # shrink rows at the lower bound with gradient above this
    thr_lo = -np.inf  # shrink rows at the upper bound with gradient below this
    prev_gap = np.inf
    passes = 0
    primal = _objective(xm, yv, w, b, c, kappa)
    for _ in range(max_passes):
        kept: list[int] = []
        pg_max = -np.inf
        pg_min = np.inf
        for k in shuffler.permutation(len(active)):
            i = int(active[k])
            s, e = indptr[i], indptr[i + 1]
            cols = indices[s:e]
            vals = data[s:e]
            grad = yv[i] * (w[cols] @ vals + b) - 1.0
            a_old = alpha[i]
            if a_old == 0.0:
                if grad > thr_hi:
                    continue
                projected = grad if grad < 0.0 else 0.0
            elif a_old == upper[i]:
                if grad < thr_lo:
                    continue
                projected = grad if grad > 0.0 else 0.0
            else:
                projected = grad
            kept.append(i)
            if projected > pg_max:
                pg_max = projected
            if projected < pg_min:
                pg_min = projected
            a_new = a_old - grad / q_diag[i]
            if a_new < 0.0:
                a_new = 0.0
            elif a_new > upper[i]:
                a_new = upper[i]
            delta = a_new - a_old
            if delta != 0.0:
                alpha[i] = a_new
                step = delta * yv[i]
                w[cols] += step * vals
                b += step
        passes += 1
        primal = _objective(xm, yv, w, b, c, kappa)
        dual = float(alpha.sum()) - 0.5 * (w @ w + b * b)
        gap = primal - dual
        if gap <= tol * max(1.0, abs(primal)):
            break
        if len(kept) < n and gap > 0.95 * prev_gap:
            active = np.arange(n)
            thr_hi = np.inf
            thr_lo = -np.inf
        else:
            active = np.asarray(kept, dtype=np.intp)
            thr_hi = pg_max if pg_max > 0.0 else np.inf
            thr_lo = pg_min if pg_min < 0.0 else -np.inf
        prev_gap = gap

    return SvmModel(
        weights=w,
        bias=float(b),
        c=float(c),
        class_weights=(float(w_pos), float(w_neg)),
        n_passes=passes,
        objective=float(primal),
    )


def _objective(
    xm: sp.csr_matrix,
    yv: np.ndarray,
    w: np.ndarray,
    b: float,
    c: float,
    kappa: np.ndarray,
) -> float:
    margins = 1.0 - yv * (xm @ w + b)
    hinge = np.maximum(margins, 0.0)
    return 0.5 * (w @ w + b * b) + c * float(kappa @ hinge)


def decision_values(model: SvmModel, x: sp.spmatrix | np.ndarray) -> np.ndarray:
    """Signed distances w . x_i + b for each row of ``x``."""
    xm = _as_csr(x)
    if xm.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} columns, got {xm.shape[1]}")
    return np.asarray(xm @ model.weights).ravel() + model.bias


def save_model(model: SvmModel, path: str | Path) -> None:
    payload = model_to_dict(model)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path: str | Path) -> SvmModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def model_to_dict(model: SvmModel) -> dict:
    return {
        "dim": model.dim,
        "bias": model.bias,
        "weights": model.weights.tolist(),
        "c": model.c,
        "class_weights": list(model.class_weights),
        "n_passes": model.n_passes,
        "objective": model.objective,
    }


def model_from_dict(payload: dict) -> SvmModel:
    weights = np.asarray(payload["weights"], dtype=float)
    if weights.shape[0] != payload["dim"]:
        raise ValueError("weight length does not match dim")
    return SvmModel(
        weights=weights,
        bias=float(payload["bias"]),
        c=float(payload["c"]),
        class_weights=tuple(payload["class_weights"]),  # type: ignore[arg-type]
        n_passes=int(payload.get("n_passes", 0)),
        objective=float(payload.get("objective", float("nan"))),
    )
