"""Scoring estimated causal graphs against ground truth.

Only inter-variable (off-diagonal) entries are ever scored. True graphs are
binarized by a nonzero test; estimates stay real-valued scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .model import Batch, RedcliffModel, naive_state_prediction


@dataclass
class GraphEstimate:
    matrices: list[np.ndarray]
    source: str = "estimate"

    def __post_init__(self):
        self.matrices = [np.asarray(m, dtype=float) for m in self.matrices]
        shapes = {m.shape for m in self.matrices}
        if len(shapes) != 1:
            raise ValueError(f"estimate matrices disagree in shape: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValueError(f"estimate matrices must be square, got {shape}")

    def __len__(self) -> int:
        return len(self.matrices)

    @property
    def n_c(self) -> int:
        return self.matrices[0].shape[0]


def _compress(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"node dimensions must be square, got {a.shape}")
    return a.reshape(a.shape[0], a.shape[1], -1).sum(axis=2)


def standardize(est, n_true_factors: int = 1, source: str = "estimate") -> GraphEstimate:
    """Collapse lag/feature axes to n_c x n_c; copy a lone graph once per true factor.

    ``est`` is either one array (n_c x n_c x ...) or a list of them.
    """
    if isinstance(est, GraphEstimate):
        mats = est.matrices
    elif isinstance(est, np.ndarray) or (isinstance(est, (list, tuple)) and np.ndim(est[0]) < 2):
        mats = [_compress(est)]
    else:
        mats = [_compress(e) for e in est]
    if len(mats) == 1 and n_true_factors > 1:
        mats = [mats[0].copy() for _ in range(n_true_factors)]
    return GraphEstimate(mats, source)


def off_diagonal(m) -> np.ndarray:
    m = np.asarray(m)
    return m[~np.eye(m.shape[0], dtype=bool)]


def binarize_truth(m) -> np.ndarray:
    return (np.asarray(m) != 0).astype(int)


# -- metrics ---------------------------------------------------------------------


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def candidate_thresholds(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=float))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def optimal_f1(scores, labels) -> tuple[float, float]:
    """Best F1 over all thresholds (predict positive when score > threshold).

    Candidates are -inf, midpoints between sorted unique scores, and +inf;
    the lowest threshold wins ties.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not labels.any():
        raise ValueError("optimal F1 is undefined without positive labels")
    thresholds = candidate_thresholds(scores)
    pred = scores[None, :] > thresholds[:, None]
    tp = (pred & labels).sum(axis=1)
    fp = (pred & ~labels).sum(axis=1)
    fn = (~pred & labels).sum(axis=1)
    f1 = _f1(tp, fp, fn)
    best = int(np.argmax(f1))  # first maximum = lowest threshold
    return float(f1[best]), float(thresholds[best])


def roc_auc(scores, labels) -> float:
    """P(score of a positive > score of a negative) + 0.5 * P(tie), via mid-ranks."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def shd_split(pred, truth) -> tuple[int, int]:
    """Hamming distance over the strict upper and strict lower triangles."""
    pred, truth = np.asarray(pred).astype(bool), np.asarray(truth).astype(bool)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[0] != pred.shape[1]:
        raise ValueError(f"shd_split needs equal square matrices, got {pred.shape} and {truth.shape}")
    diff = pred != truth
    return int(np.triu(diff, 1).sum()), int(np.tril(diff, -1).sum())


def score_factor(estimate, truth) -> dict:
    """Optimal F1, ROC-AUC and split SHD for one estimated/true graph pair.

    SHD uses the estimate binarized at its optimal-F1 threshold. Metrics that
    are undefined for the true graph (no edges, or all edges) come back NaN.
    """
    estimate, truth_bin = np.asarray(estimate, dtype=float), binarize_truth(truth)
    s, y = off_diagonal(estimate), off_diagonal(truth_bin).astype(bool)
    out = {"f1": np.nan, "threshold": np.nan, "roc_auc": np.nan}
    if y.any():
        out["f1"], out["threshold"] = optimal_f1(s, y)
    if y.any() and not y.all():
        out["roc_auc"] = roc_auc(s, y)
    threshold = out["threshold"] if np.isfinite(out["f1"]) else np.inf
    pred = estimate > threshold
    np.fill_diagonal(pred, False)
    truth_off = truth_bin.astype(bool)
    np.fill_diagonal(truth_off, False)
    out["shd_upper"], out["shd_lower"] = shd_split(pred, truth_off)
    return out


def match_factors(est: GraphEstimate, truth: GraphEstimate, supervised: int = 0) -> list[tuple[int, int]]:
    """Pair estimated factors with true factors; returns ``(est_index, truth_index)``.

    The first ``supervised`` factors pair by label index. The rest are
    matched greedily by optimal F1, each estimate and truth used once; true
    factors left over after the estimates run out take their best estimate.
    """
    m_true = len(truth)
    if len(est) == 1 and m_true > 1:
        est = standardize(est.matrices[0], m_true)
    pairs: list[tuple[int, int]] = []
    supervised = min(supervised, len(est), m_true)
    pairs += [(b, b) for b in range(supervised)]
    free_est = list(range(supervised, len(est)))
    free_true = list(range(supervised, m_true))

    def f1_of(e, t):
        y = off_diagonal(binarize_truth(truth.matrices[t])).astype(bool)
        if not y.any():
            return 0.0
        return optimal_f1(off_diagonal(est.matrices[e]), y)[0]

    table = {(e, t): f1_of(e, t) for e in range(len(est)) for t in free_true}
    while free_est and free_true:
        e, t = max(((e, t) for e in free_est for t in free_true), key=lambda et: (table[et], -et[0], -et[1]))
        pairs.append((e, t))
        free_est.remove(e)
        free_true.remove(t)
    for t in free_true:
        e = max(range(len(est)), key=lambda e: (table[(e, t)], -e))
        pairs.append((e, t))
    return sorted(pairs, key=lambda p: p[1])


def evaluate_graphs(est, truth, supervised: int = 0) -> list[dict]:
    """Per-true-factor scores after standardizing and matching."""
    truth = truth if isinstance(truth, GraphEstimate) else GraphEstimate(list(truth), "truth")
    est = standardize(est, len(truth))
    rows = []
    for e, t in match_factors(est, truth, supervised):
        row = score_factor(est.matrices[e], truth.matrices[t])
        row.update(factor=t, estimate_index=e)
        rows.append(row)
    return rows


# -- aggregation --------------------------------------------------------------------


def mean_sem(values) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)); SEM is 0 for a single value."""
    v = np.asarray(values, dtype=float).ravel()
    v = v[~np.isnan(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def pairwise_improvement(a_scores, b_scores) -> tuple[float, float]:
    """Mean and SEM of a - b over a shared index set (dicts or equal-length sequences)."""
    if isinstance(a_scores, dict) or isinstance(b_scores, dict):
        if set(a_scores) != set(b_scores):
            raise ValueError("score index sets differ")
        keys = sorted(a_scores)
        a = np.array([a_scores[k] for k in keys], dtype=float)
        b = np.array([b_scores[k] for k in keys], dtype=float)
    else:
        a, b = np.asarray(a_scores, dtype=float), np.asarray(b_scores, dtype=float)
        if a.shape != b.shape:
            raise ValueError("score index sets differ")
    return mean_sem(a - b)


def comparative_placement(table, higher_is_better) -> np.ndarray:
    """Mean rank per method (rows) across metrics (columns); 1 is best, ties share mean rank."""
    table = np.asarray(table, dtype=float)
    higher_is_better = np.asarray(higher_is_better, dtype=bool)
    if table.ndim != 2 or table.shape[1] != higher_is_better.size:
        raise ValueError("table must be methods x metrics with one direction per metric")
    if np.isnan(table).any():
        raise ValueError("placement table has missing cells")
    oriented = np.where(higher_is_better[None, :], -table, table)
    ranks = np.column_stack([rankdata(oriented[:, j]) for j in range(table.shape[1])])
    return ranks.mean(axis=1)


def naive_baseline_delta(model: RedcliffModel, data: Batch) -> float:
    """Mean over samples of MSE(y, 1) - MSE(y, y_hat); positive favours the model."""
    if model.B == 0:
        raise ValueError("model has no label head")
    _, y_hat = model.state.forward(data.inputs)
    y = data.labels[:, : model.B]
    naive = ((y - naive_state_prediction(model.B)) ** 2).mean(axis=1)
    fitted = ((y - y_hat.data) ** 2).mean(axis=1)
    return float((naive - fitted).mean())


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)  # one per (system, repeat, method, factor)
    aggregate: dict = field(default_factory=dict)
    improvements: dict = field(default_factory=dict)
    placement: dict = field(default_factory=dict)
