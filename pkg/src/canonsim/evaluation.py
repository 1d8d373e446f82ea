"""Downstream protocols on canonical-similarity scores.

Zero-shot classification against class "captions", cross-modal retrieval
metrics, ROC/AUC detection (single and two-threshold), and the
training-pair shuffling used to probe robustness.  Ties are always broken
toward the lower index so every metric is deterministic.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cca import FeatureMatrix, fit, project
from .similarity import ScoreMatrix, score_matrix
from .stats import average_ranks

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision_at_1", "precision_at_k", "map_at_k", "auc", "p_value")


class EvaluationError(ValueError):
    pass


def _scores(scores):
    return scores.scores if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=np.float64)


def classify(scores, truth):
    """Argmax classification; returns ``(accuracy, predictions)``."""
    s = _scores(scores)
    if s.ndim != 2 or s.size == 0:
        raise EvaluationError("cannot classify with an empty score matrix")
    truth = np.asarray(truth, dtype=np.intp)
    if truth.shape != (s.shape[0],):
        raise EvaluationError(f"need one class index per row: {truth.shape} vs {s.shape[0]} rows")
    if truth.min() < 0 or truth.max() >= s.shape[1]:
        raise EvaluationError("class index out of range")
    pred = np.argmax(s, axis=1)  # first maximum wins
    return float(np.mean(pred == truth)), pred


@dataclass
class RetrievalReport:
    k: int
    precision_at_1: float
    precision_at_k: float
    map_at_k: float
    n_queries: int
    skipped: int = 0
    per_query: list = field(default_factory=list, repr=False)


def retrieval_metrics(scores, relevance, k=5, strict=False):
    """Precision@1, precision@k and mAP@k of ranking columns for each query row.

    AP@k for a query is ``sum_{i<=k} rel(i) * precision@i / min(k, n_relevant)``.
    Queries without any relevant column are skipped (or raise if `strict`).
    """
    s = _scores(scores)
    rel = np.asarray(relevance, dtype=bool)
    if rel.shape != s.shape:
        raise EvaluationError(f"relevance shape {rel.shape} does not match scores {s.shape}")
    if k < 1:
        raise EvaluationError("k must be >= 1")
    kk = min(k, s.shape[1])
    n_rel = rel.sum(axis=1)
    empty = n_rel == 0
    if empty.any():
        if strict:
            raise EvaluationError(f"query row {int(np.argmax(empty))} has no relevant items")
        log.warning("skipping %d queries without relevant items", int(empty.sum()))
    order = np.argsort(-s, axis=1, kind="stable")
    hits = np.take_along_axis(rel, order[:, :kk], axis=1).astype(np.float64)
    prec_at_i = np.cumsum(hits, axis=1) / np.arange(1, kk + 1)
    ap = (hits * prec_at_i).sum(axis=1) / np.maximum(np.minimum(k, n_rel), 1)
    p1 = hits[:, 0]
    pk = hits.sum(axis=1) / k
    keep = ~empty
    if not keep.any():
        raise EvaluationError("no query has a relevant item")
    per_query = [
        {"query": int(i), "precision_at_1": float(p1[i]), "precision_at_k": float(pk[i]), "ap_at_k": float(ap[i])}
        for i in np.flatnonzero(keep)
    ]
    return RetrievalReport(
        k=k,
        precision_at_1=float(p1[keep].mean()),
        precision_at_k=float(pk[keep].mean()),
        map_at_k=float(ap[keep].mean()),
        n_queries=int(keep.sum()),
        skipped=int(empty.sum()),
        per_query=per_query,
    )


@dataclass(frozen=True)
class RocCurve:
    points: tuple
    auc: float

    @property
    def fpr(self):
        return np.array([p[0] for p in self.points])

    @property
    def tpr(self):
        return np.array([p[1] for p in self.points])


def trapezoid_area(fpr, tpr):
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def mann_whitney_auc(scores, labels):
    """P(positive > negative) + P(tie) / 2, from average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    ranks, _ = average_ranks(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC over every distinct score threshold; tied scores move together."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise EvaluationError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise EvaluationError("labels must be binary 0/1")
    labels = labels.astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    ss, ll = scores[order], labels[order]
    # last index of each run of equal scores
    cut = np.r_[np.flatnonzero(ss[1:] != ss[:-1]), len(ss) - 1]
    tp = np.r_[0, np.cumsum(ll)[cut]]
    fp = np.r_[0, np.cumsum(~ll)[cut]]
    fpr, tpr = fp / n_neg, tp / n_pos
    auc = trapezoid_area(fpr, tpr)
    check = mann_whitney_auc(scores, labels)
    if abs(auc - check) > 1e-9:
        raise ArithmeticError(f"trapezoid AUC {auc} disagrees with rank AUC {check}")
    return RocCurve(tuple(zip(fpr.tolist(), tpr.tolist())), auc)


def misinfo_decision(img_caption_score, caption_caption_score, t1, t2):
    """Flag as misinformative when both similarities fall below their thresholds."""
    return bool(img_caption_score < t1 and caption_caption_score < t2)


def _thresholds(x):
    return np.r_[np.unique(x), np.inf]


def pareto_envelope(points):
    """Upper-left frontier of (fpr, tpr) points, closed with (0,0) and (1,1).

    The corners are always kept so the curve spans fpr in [0, 1] even when
    they are dominated by other operating points.
    """
    pts = sorted(set(points), key=lambda p: (p[0], -p[1]))
    out = []
    best = -1.0
    for f, t in pts:
        if t > best:
            if out and out[-1][0] == f:
                continue
            out.append((f, t))
            best = t
    if not out or out[0] != (0.0, 0.0):
        out.insert(0, (0.0, 0.0))
    if out[-1] != (1.0, 1.0):
        out.append((1.0, 1.0))
    return out


def two_threshold_roc(img_scores, cap_scores, labels):
    """ROC for the conjunction rule `misinfo_decision` swept over both thresholds.

    `labels` mark misinformative items (1).  Every pair of observed-value
    thresholds (plus +inf) is evaluated; the reported curve is the Pareto
    upper envelope of the resulting operating points.
    """
    a = np.asarray(img_scores, dtype=np.float64)
    b = np.asarray(cap_scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if not (a.shape == b.shape == y.shape):
        raise EvaluationError("score and label arrays differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs at least one positive and one negative")
    t2 = _thresholds(b)
    # for each item, the first t2 index at which b < t2 holds
    first = np.searchsorted(t2, b, side="right")
    points = set()
    for t1 in _thresholds(a):
        flagged = a < t1
        tp = np.bincount(first[flagged & y], minlength=len(t2) + 1).cumsum()[: len(t2)]
        fp = np.bincount(first[flagged & ~y], minlength=len(t2) + 1).cumsum()[: len(t2)]
        points.update(zip((fp / n_neg).tolist(), (tp / n_pos).tolist()))
    env = pareto_envelope(points)
    fpr, tpr = zip(*env)
    return RocCurve(tuple(env), trapezoid_area(fpr, tpr))


def shuffle_indices(n, fraction, seed):
    """Partner index for each position after shuffling round(fraction * n) of them."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    k = int(math.floor(fraction * n + 0.5))
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    index = np.arange(n)
    index[chosen] = chosen[rng.permutation(k)]
    return index, chosen


def shuffle_labels(pairing, fraction, seed):
    """Permute the modality-2 side among a random subset of pairs."""
    pairing = list(pairing)
    index, _ = shuffle_indices(len(pairing), fraction, seed)
    return [(pairing[i][0], pairing[j][1]) for i, j in enumerate(index)]


@dataclass
class EvalReport:
    """Metric values plus a provenance header, serializable as text or JSON."""

    metrics: dict
    header: dict = field(default_factory=dict)
    table: list = field(default_factory=list)

    def to_text(self):
        lines = [f"# {k}: {v}" for k, v in self.header.items()]
        lines += [f"{k}: {_fmt(v)}" for k, v in self.metrics.items()]
        if self.table:
            cols = list(self.table[0])
            lines.append(",".join(cols))
            lines += [",".join(_fmt(row[c]) for c in cols) for row in self.table]
        return "\n".join(lines) + "\n"

    def to_json(self):
        doc = {"header": self.header, "metrics": self.metrics}
        if self.table:
            doc["table"] = self.table
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def classification_accuracy(model, test1, prototypes, truth, s=None):
    """Accuracy of classifying modality-1 items against modality-2 class prototypes."""
    u = project(model, 1, test1)
    v = project(model, 2, prototypes)
    sm = score_matrix(u, v, model.rho, model.s if s is None else s, degenerate_policy="zero")
    return classify(sm, truth)[0]


def s_sweep(model, test1, prototypes, truth):
    """Accuracy for every s in 1..r; returns ``(rows, best_s)``."""
    u = project(model, 1, test1)
    v = project(model, 2, prototypes)
    rows = []
    for s in range(1, model.r + 1):
        sm = score_matrix(u, v, model.rho, s, degenerate_policy="zero")
        rows.append({"s": s, "rho_s": float(model.rho[s - 1]), "accuracy": classify(sm, truth)[0]})
    best = max(rows, key=lambda r: (r["accuracy"], -r["s"]))["s"]
    for row in rows:
        row["best"] = int(row["s"] == best)
    return rows, best


def robustness_sweep(train1, train2, test1, prototypes, truth, fractions, seed, repeats=10, eps=1e-6, s_rule=None):
    """Test accuracy after shuffling each fraction of the training pairs.

    Every fraction is run `repeats` times with independent shuffles; rows
    report the mean accuracy and its standard error across repeats (the
    shuffle, not the test sample, dominates the variance).
    """
    kwargs = {} if s_rule is None else {"s_rule": s_rule}
    rows = []
    for i, frac in enumerate(fractions):
        accs, ss = [], []
        for rep in range(repeats):
            index, chosen = shuffle_indices(train1.n_items, frac, [seed, i, rep])
            shuffled2 = FeatureMatrix(train2.values[:, index], train1.ids)
            model = fit(train1, shuffled2, eps=eps, **kwargs)
            accs.append(classification_accuracy(model, test1, prototypes, truth))
            ss.append(model.s)
        accs = np.array(accs)
        stderr = float(accs.std(ddof=1) / math.sqrt(repeats)) if repeats > 1 else float("nan")
        rows.append(
            {
                "fraction": float(frac),
                "n_shuffled": int(len(chosen)),
                "repeats": int(repeats),
                "s_min": int(min(ss)),
                "s_max": int(max(ss)),
                "accuracy": float(accs.mean()),
                "stderr": stderr,
            }
        )
    return rows
