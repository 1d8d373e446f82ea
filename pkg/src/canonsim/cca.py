"""Closed-form CCA between two embedding spaces.

Features are stored column-wise (``dim x n_items``).  Fitting centers both
modalities, whitens each with a ridge-guarded inverse square root of its
second-moment matrix, and takes the SVD of the whitened cross-moment.  The
resulting maps send centered features into an ``r = min(d1, d2)``
dimensional space in which coordinate ``i`` of the two modalities has
correlation ``rho[i]`` on the training data.
"""

import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .linalg import inv_sqrt_spd, svd

log = logging.getLogger(__name__)

RHO_TOL = 1e-6
MODEL_MAGIC = b"CSAM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIIIIId")


class PairingError(ValueError):
    """The two modalities are not paired item-for-item."""


class NoDimensionError(ValueError):
    """No canonical correlation reaches the requested threshold."""


class ModelFileError(ValueError):
    """A serialized model could not be decoded."""


@dataclass(frozen=True)
class FeatureMatrix:
    """One modality's embeddings: `values` is ``dim x n_items``, one column per item."""

    values: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"feature values must be a non-empty dim x n array, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values contain NaN or Inf")
        ids = tuple(self.ids) if len(self.ids) else tuple(str(i) for i in range(values.shape[1]))
        if len(ids) != values.shape[1]:
            raise ValueError(f"{len(ids)} ids for {values.shape[1]} items")
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", ids)

    @property
    def dim(self):
        return self.values.shape[0]

    @property
    def n_items(self):
        return self.values.shape[1]

    def take(self, index):
        """Sub-select (and reorder) items by integer position."""
        index = np.asarray(index, dtype=np.intp)
        return FeatureMatrix(self.values[:, index], tuple(self.ids[i] for i in index))


@dataclass(frozen=True)
class Threshold:
    """Keep every canonical dimension whose correlation is at least `value`."""

    value: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.value}")


@dataclass(frozen=True)
class Fixed:
    """Keep exactly the first `k` canonical dimensions."""

    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"fixed s must be a positive integer, got {self.k}")


SRule = Union[Threshold, Fixed]


def select_s(rho, rule):
    """Number of leading canonical dimensions to keep under `rule`.

    >>> select_s([0.9, 0.5, 0.1], Threshold(0.3))
    2
    """
    rho = np.asarray(rho, dtype=np.float64)
    if isinstance(rule, Fixed):
        if rule.k > len(rho):
            raise ValueError(f"fixed s = {rule.k} exceeds r = {len(rho)}")
        return int(rule.k)
    if isinstance(rule, Threshold):
        if len(rho) == 0 or rho[0] < rule.value:
            top = rho[0] if len(rho) else float("nan")
            raise NoDimensionError(
                f"no canonical correlation reaches {rule.value} (largest is {top:.4g}); "
                "lower the threshold or use a fixed s"
            )
        return int(np.count_nonzero(rho >= rule.value))
    raise TypeError(f"unknown s rule {rule!r}")


def center(features):
    """Subtract the per-feature (row) mean. Returns ``(centered, mean)``."""
    if features.n_items < 2:
        raise ValueError("centering needs at least two items")
    mean = features.values.mean(axis=1)
    return FeatureMatrix(features.values - mean[:, None], features.ids), mean


@dataclass(frozen=True)
class CsaModel:
    """Fitted canonical maps.

    `map_a` is ``r x d1`` and `map_b` is ``r x d2``; both act on features
    centered with the training means `mean_a` / `mean_b`.
    """

    map_a: np.ndarray
    map_b: np.ndarray
    rho: np.ndarray
    mean_a: np.ndarray
    mean_b: np.ndarray
    eps: float
    s: int

    def __post_init__(self):
        r = len(self.rho)
        if self.map_a.shape != (r, len(self.mean_a)) or self.map_b.shape != (r, len(self.mean_b)):
            raise ValueError("inconsistent model array shapes")
        if not 1 <= self.s <= r:
            raise ValueError(f"s = {self.s} outside [1, {r}]")

    @property
    def r(self):
        return len(self.rho)

    @property
    def d1(self):
        return self.map_a.shape[1]

    @property
    def d2(self):
        return self.map_b.shape[1]

    def with_s(self, rule_or_s):
        """Copy of the model with a different retained dimension."""
        s = rule_or_s if isinstance(rule_or_s, (int, np.integer)) else select_s(self.rho, rule_or_s)
        return replace(self, s=int(s))

    def to_bytes(self):
        header = _MODEL_HEADER.pack(
            MODEL_MAGIC, MODEL_VERSION, self.d1, self.d2, self.r, self.s, float(self.eps)
        )
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.mean_a, self.mean_b, self.rho, self.map_a, self.map_b)
        )
        return header + body

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < _MODEL_HEADER.size:
            raise ModelFileError("model file is truncated (incomplete header)")
        magic, version, d1, d2, r, s, eps = _MODEL_HEADER.unpack_from(blob)
        if magic != MODEL_MAGIC:
            raise ModelFileError(f"bad model magic {magic!r}, expected {MODEL_MAGIC!r}")
        if version != MODEL_VERSION:
            raise ModelFileError(f"unsupported model version {version}")
        if r != min(d1, d2) or not 1 <= s <= r:
            raise ModelFileError(f"inconsistent model header d1={d1} d2={d2} r={r} s={s}")
        sizes = [d1, d2, r, r * d1, r * d2]
        expected = _MODEL_HEADER.size + 8 * sum(sizes)
        if len(blob) != expected:
            raise ModelFileError(f"model file has {len(blob)} bytes, expected {expected}")
        arrays, offset = [], _MODEL_HEADER.size
        for n in sizes:
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64))
            offset += 8 * n
        mean_a, mean_b, rho, map_a, map_b = arrays
        return cls(map_a.reshape(r, d1), map_b.reshape(r, d2), rho, mean_a, mean_b, eps, s)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())


def load_model(path):
    with open(path, "rb") as f:
        return CsaModel.from_bytes(f.read())


def _check_paired(z1, z2):
    if z1.n_items != z2.n_items:
        raise PairingError(f"item counts differ: {z1.n_items} vs {z2.n_items}")
    for i, (a, b) in enumerate(zip(z1.ids, z2.ids)):
        if a != b:
            raise PairingError(f"item {i} is not paired: id {a!r} vs {b!r}")


def fit(z1, z2, eps=1e-6, s_rule=Threshold()):
    """Fit the canonical maps on paired training features.

    `eps` is a relative ridge: each second-moment matrix ``S`` is inverted as
    ``S + eps * trace(S) / d * I``.
    """
    _check_paired(z1, z2)
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    c1, mean_a = center(z1)
    c2, mean_b = center(z2)
    x, y = c1.values, c2.values
    sxx = x @ x.T
    syy = y @ y.T
    r1 = inv_sqrt_spd(sxx, eps * np.trace(sxx) / z1.dim)
    r2 = inv_sqrt_spd(syy, eps * np.trace(syy) / z2.dim)
    u, p, vt = svd(r1 @ (x @ y.T) @ r2)
    r = min(z1.dim, z2.dim)
    rho = p[:r]
    if rho[0] > 1 + RHO_TOL or rho[-1] < -RHO_TOL:
        log.warning("canonical correlations outside [0, 1] before clamping: [%g, %g]", rho[-1], rho[0])
    rho = np.clip(rho, 0.0, 1.0)
    map_a = u[:, :r].T @ r1
    map_b = vt[:r] @ r2
    s = select_s(rho, s_rule)
    return CsaModel(map_a, map_b, rho, mean_a, mean_b, float(eps), s)


def project(model, side, features):
    """Map features into the shared space: returns ``r x n_items``.

    `side` is ``"first"`` / ``1`` for modality 1 or ``"second"`` / ``2``.
    Features are centered with the model's training means.
    """
    if side in ("first", 1):
        m, mean = model.map_a, model.mean_a
    elif side in ("second", 2):
        m, mean = model.map_b, model.mean_b
    else:
        raise ValueError(f"side must be 'first' or 'second', got {side!r}")
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != m.shape[1]:
        raise ValueError(f"feature dim {values.shape[0]} does not match model input dim {m.shape[1]}")
    return m @ (values - mean[:, None])
