"""Correlation-weighted truncated cosine similarity in the canonical space.

For projected vectors ``u`` (modality 1) and ``v`` (modality 2)::

    sim(u, v; s) = sum_{i<s} rho_i u_i v_i / (||u[:s]|| * ||v[:s]||)

Sums always run in ascending coordinate order, both in the scalar and the
batch routine, so `score_matrix` agrees with `similarity` bit for bit.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class DegenerateVectorError(ArithmeticError):
    """A truncated projected vector has zero norm."""


@dataclass(frozen=True)
class ScoreMatrix:
    """Pairwise similarities: rows are modality-1 items, columns modality-2 items."""

    scores: np.ndarray
    row_ids: tuple
    col_ids: tuple

    def __post_init__(self):
        if self.scores.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError("score shape does not match id lists")

    @property
    def shape(self):
        return self.scores.shape

    def transpose(self):
        return ScoreMatrix(self.scores.T.copy(), self.col_ids, self.row_ids)

    def to_text(self, delimiter=",", header=()):
        """Delimited text: optional '# ' provenance lines, then a header row of column ids."""
        lines = [f"# {line}" for line in header]
        lines.append(delimiter.join(["id", *map(str, self.col_ids)]))
        for rid, row in zip(self.row_ids, self.scores):
            lines.append(delimiter.join([str(rid), *(repr(float(x)) for x in row)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, delimiter=","):
        rows = [line for line in text.splitlines() if line and not line.startswith("#")]
        col_ids = tuple(rows[0].split(delimiter)[1:])
        row_ids, values = [], []
        for line in rows[1:]:
            parts = line.split(delimiter)
            row_ids.append(parts[0])
            values.append([float(x) for x in parts[1:]])
        scores = np.array(values, dtype=np.float64).reshape(len(row_ids), len(col_ids))
        return cls(scores, tuple(row_ids), col_ids)


def _check_s(s, r):
    if not 1 <= s <= r:
        raise ValueError(f"s = {s} outside [1, {r}]")


def similarity(u, v, rho, s):
    """Canonical similarity of one projected pair."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"projected vectors must be 1-D of equal length, got {u.shape} and {v.shape}")
    _check_s(s, len(u))
    num = nu = nv = 0.0
    for i in range(s):
        num = num + float(rho[i]) * float(u[i]) * float(v[i])
        nu = nu + float(u[i]) * float(u[i])
        nv = nv + float(v[i]) * float(v[i])
    nu, nv = math.sqrt(nu), math.sqrt(nv)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError(f"zero-norm projected vector in the first {s} dimensions")
    return num / (nu * nv)


def score_matrix(proj1, proj2, rho, s, degenerate_policy="error", row_ids=None, col_ids=None):
    """All-pairs canonical similarity between columns of `proj1` and `proj2`.

    With ``degenerate_policy="zero"`` a zero-norm column scores 0 against
    everything; with ``"error"`` it raises naming the offending item.
    """
    proj1 = np.asarray(proj1, dtype=np.float64)
    proj2 = np.asarray(proj2, dtype=np.float64)
    if proj1.shape[0] != proj2.shape[0]:
        raise ValueError(f"projection dims differ: {proj1.shape[0]} vs {proj2.shape[0]}")
    if degenerate_policy not in ("error", "zero"):
        raise ValueError(f"unknown degenerate policy {degenerate_policy!r}")
    _check_s(s, proj1.shape[0])
    m1, m2 = proj1.shape[1], proj2.shape[1]
    row_ids = tuple(row_ids) if row_ids is not None else tuple(str(i) for i in range(m1))
    col_ids = tuple(col_ids) if col_ids is not None else tuple(str(j) for j in range(m2))

    num = np.zeros((m1, m2))
    nu = np.zeros(m1)
    nv = np.zeros(m2)
    for i in range(s):
        a, b = proj1[i], proj2[i]
        num += (rho[i] * a)[:, None] * b[None, :]
        nu += a * a
        nv += b * b
    nu, nv = np.sqrt(nu), np.sqrt(nv)

    bad_rows, bad_cols = nu == 0.0, nv == 0.0
    n_bad = int(bad_rows.sum() + bad_cols.sum())
    if n_bad:
        if degenerate_policy == "error":
            which = (
                f"modality-1 item {row_ids[int(np.argmax(bad_rows))]!r}"
                if bad_rows.any()
                else f"modality-2 item {col_ids[int(np.argmax(bad_cols))]!r}"
            )
            raise DegenerateVectorError(f"zero-norm projected vector for {which} (s = {s})")
        log.warning("%d degenerate projected vectors scored as 0", n_bad)
    denom = nu[:, None] * nv[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = num / denom
    scores[denom == 0.0] = 0.0
    return ScoreMatrix(scores, row_ids, col_ids)


def paired_scores(proj1, proj2, rho, s, degenerate_policy="error"):
    """Similarity of column i of `proj1` with column i of `proj2`, for every i."""
    proj1 = np.asarray(proj1, dtype=np.float64)
    proj2 = np.asarray(proj2, dtype=np.float64)
    if proj1.shape != proj2.shape:
        raise ValueError(f"paired projections differ in shape: {proj1.shape} vs {proj2.shape}")
    _check_s(s, proj1.shape[0])
    num = np.zeros(proj1.shape[1])
    nu = np.zeros(proj1.shape[1])
    nv = np.zeros(proj1.shape[1])
    for i in range(s):
        a, b = proj1[i], proj2[i]
        num += rho[i] * a * b
        nu += a * a
        nv += b * b
    denom = np.sqrt(nu) * np.sqrt(nv)
    bad = denom == 0.0
    if bad.any():
        if degenerate_policy == "error":
            raise DegenerateVectorError(f"zero-norm projected vector at pair {int(np.argmax(bad))} (s = {s})")
        log.warning("%d degenerate projected pairs scored as 0", int(bad.sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / denom
    out[bad] = 0.0
    return out
