"""Linear latent-factor experiments.

Paired observations are generated as ``x_k = G_k @ latents + noise_k``; each
modality is encoded by the closed-form optimal linear contrastive encoder
under complementary masking, and CSA is fitted on the encoded features.  The
lab measures how the retained dimension s trades signal-to-noise and
distance preservation against the ability to tell true pairs from shuffled
ones.
"""

from dataclasses import dataclass, replace

import numpy as np

from .cca import FeatureMatrix, Fixed, fit, project
from .linalg import ShapeError, as_matrix, sym_eig
from .similarity import paired_scores
from .stats import rank_sum_pvalue


@dataclass(frozen=True)
class SyntheticConfig:
    q: int = 10
    p1: int = 40
    p2: int = 60
    n: int = 2000
    noise_sigma: float = 1.0
    latent_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.q <= min(self.p1, self.p2):
            raise ValueError(f"need 1 <= q <= min(p1, p2), got q={self.q}, p1={self.p1}, p2={self.p2}")
        if self.n < 2:
            raise ValueError(f"need n >= 2, got {self.n}")
        if not (self.noise_sigma > 0 and self.latent_sigma > 0):
            raise ValueError("sigmas must be positive")


@dataclass(frozen=True)
class SyntheticDataset:
    latents: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    noise1: np.ndarray
    noise2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray


def generate(cfg, latents=None):
    """Draw a paired dataset. `latents` (q x n) may be supplied by the caller."""
    rng = np.random.default_rng(cfg.seed)
    g1 = rng.standard_normal((cfg.p1, cfg.q))
    g2 = rng.standard_normal((cfg.p2, cfg.q))
    drawn = cfg.latent_sigma * rng.standard_normal((cfg.q, cfg.n))
    latents = drawn if latents is None else np.asarray(latents, dtype=np.float64)
    if latents.shape != (cfg.q, cfg.n):
        raise ShapeError(f"latents must be {cfg.q}x{cfg.n}, got {latents.shape}")
    noise1 = cfg.noise_sigma * rng.standard_normal((cfg.p1, cfg.n))
    noise2 = cfg.noise_sigma * rng.standard_normal((cfg.p2, cfg.n))
    x1 = g1 @ latents + noise1
    x2 = g2 @ latents + noise2
    return SyntheticDataset(latents, g1, g2, noise1, noise2, x1, x2)


def complementary_mask_pairs(x, seed):
    """Split `x` into two copies with complementary random zero-masks (p = 0.5 each)."""
    x = np.asarray(x, dtype=np.float64)
    keep = np.random.default_rng(seed).random(x.shape) < 0.5
    return np.where(keep, x, 0.0), np.where(keep, 0.0, x)


def contrastive_matrix(x):
    """OffDiag(X X^T) - X (1 - I) X^T / (N - 1) for a ``p x N`` data matrix."""
    x = as_matrix(x)
    n = x.shape[1]
    if n < 2:
        raise ValueError("need at least two samples")
    gram = x @ x.T
    total = x.sum(axis=1)
    off = gram - np.diag(np.diag(gram))
    # X (1 - I) X^T = (X 1)(X 1)^T - X X^T
    return off - (np.outer(total, total) - gram) / (n - 1)


def optimal_linear_encoder(x, q):
    """Rows are the top-q unit eigenvectors of `contrastive_matrix(x)` (``q x p``).

    Each row's sign is fixed so its largest-magnitude entry is positive.
    """
    x = as_matrix(x)
    if q > x.shape[0]:
        raise ShapeError(f"encoder dim q={q} exceeds data dim p={x.shape[0]}")
    _, vecs = sym_eig(contrastive_matrix(x))
    enc = vecs[:, :q].T.copy()
    lead = enc[np.arange(q), np.argmax(np.abs(enc), axis=1)]
    enc *= np.where(lead < 0, -1.0, 1.0)[:, None]
    return enc


@dataclass(frozen=True)
class TradeoffRow:
    s: int
    snr_db: float
    lambda_min_db: float
    p_value: float


@dataclass(frozen=True)
class LinearPipeline:
    """Encoders plus the CSA model fitted on their outputs."""

    enc1: np.ndarray
    enc2: np.ndarray
    model: object
    z1: FeatureMatrix
    z2: FeatureMatrix

    def composed(self, side, s):
        """Rows 1..s of the map from raw observations to the canonical space."""
        if side == 1:
            return (self.model.map_a @ self.enc1)[:s]
        return (self.model.map_b @ self.enc2)[:s]


def fit_pipeline(ds, q, eps=0.0, s_rule=Fixed(1)):
    """Build both encoders on the observations and fit CSA on the encoded features."""
    enc1 = optimal_linear_encoder(ds.x1, q)
    enc2 = optimal_linear_encoder(ds.x2, q)
    z1 = FeatureMatrix(enc1 @ ds.x1)
    z2 = FeatureMatrix(enc2 @ ds.x2)
    return LinearPipeline(enc1, enc2, fit(z1, z2, eps=eps, s_rule=s_rule), z1, z2)


def random_derangement(n, rng):
    """Uniform random n-cycle: partner[i] != i for every i (n >= 2)."""
    order = rng.permutation(n)
    partner = np.empty(n, dtype=np.intp)
    partner[order] = np.roll(order, -1)
    return partner


def min_gain(m):
    """Smallest ||M v|| over unit v; zero whenever M has fewer rows than columns."""
    rows, cols = m.shape
    if rows < cols:
        return 0.0
    return float(np.linalg.svd(m, compute_uv=False)[-1])


def tradeoff_curves(cfg, s_grid=None, eps=0.0):
    """Per-s SNR, smallest singular value and paired-vs-shuffled p-value."""
    ds = generate(cfg)
    pipe = fit_pipeline(ds, cfg.q, eps=eps)
    model = pipe.model
    s_grid = list(range(1, model.r + 1)) if s_grid is None else [int(s) for s in s_grid]
    for s in s_grid:
        if not 1 <= s <= model.r:
            raise ValueError(f"s = {s} outside [1, {model.r}]")

    u = project(model, 1, pipe.z1)
    v = project(model, 2, pipe.z2)
    partner = random_derangement(cfg.n, np.random.default_rng([cfg.seed, 1]))
    signal = ds.g1 @ ds.latents
    rows = []
    for s in s_grid:
        p = pipe.composed(1, s)
        snr = np.mean(np.sum((p @ signal) ** 2, axis=0)) / np.mean(np.sum((p @ ds.noise1) ** 2, axis=0))
        sv = np.linalg.svd(p, compute_uv=False)
        paired = paired_scores(u, v, model.rho, s, degenerate_policy="zero")
        shuffled = paired_scores(u, v[:, partner], model.rho, s, degenerate_policy="zero")
        rows.append(
            TradeoffRow(
                s=s,
                snr_db=float(10 * np.log10(snr)),
                lambda_min_db=float(20 * np.log10(sv[-1])),
                p_value=rank_sum_pvalue(paired, shuffled),
            )
        )
    return rows


@dataclass(frozen=True)
class BoundReport:
    """Slack of ``sigma_min(M) * ||dx|| <= ||M dx||`` per modality for ``M = rows 1..s of A* E``.

    The ``*_signal`` fields repeat the check for noise-free differences
    ``G (l_a - l_b)``, using the gain of M restricted to the column space of G.
    """

    s: int
    sigma_min: tuple
    sigma_min_signal: tuple
    min_slack: tuple
    min_slack_signal: tuple
    passed: bool


def distance_bound_check(ds, pipe, s, n_pairs=1000, seed=0, pairs=None, atol=1e-9):
    """Check the distance lower bound on `n_pairs` random distinct index pairs.

    Explicit ``pairs=(a_indices, b_indices)`` override the random draw.
    """
    n = ds.x1.shape[1]
    if pairs is None:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, n, n_pairs)
        b = (a + rng.integers(1, n, n_pairs)) % n
    else:
        a, b = (np.asarray(i, dtype=np.intp) for i in pairs)
    dl = ds.latents[:, a] - ds.latents[:, b]
    sig, sig_s, slack, slack_s = [], [], [], []
    model = pipe.model
    for side, x, g, enc in ((1, ds.x1, ds.g1, pipe.enc1), (2, ds.x2, ds.g2, pipe.enc2)):
        m = pipe.composed(side, s)
        p = (model.map_a if side == 1 else model.map_b)[:s]
        dx = x[:, a] - x[:, b]
        dz = enc @ dx
        lo = min_gain(m)
        slack.append(float(np.min(np.linalg.norm(p @ dz, axis=0) - lo * np.linalg.norm(dx, axis=0))))
        qg, _ = np.linalg.qr(g)
        lo_s = min_gain(m @ qg)
        dxs = g @ dl
        slack_s.append(float(np.min(np.linalg.norm(m @ dxs, axis=0) - lo_s * np.linalg.norm(dxs, axis=0))))
        sig.append(lo)
        sig_s.append(lo_s)
    passed = min(slack + slack_s) >= -atol
    return BoundReport(s, tuple(sig), tuple(sig_s), tuple(slack), tuple(slack_s), passed)


@dataclass(frozen=True)
class ClassTask:
    """Encoded features for zero-shot classification on latent classes.

    Training pairs are ``(E1 x1, E2 x2)``.  Class "captions" are the
    encoded noise-free modality-2 view of each class mean, ``E2 G2 mu_c``.
    """

    train1: FeatureMatrix
    train2: FeatureMatrix
    test1: FeatureMatrix
    test2: FeatureMatrix
    prototypes: FeatureMatrix
    train_labels: np.ndarray
    test_labels: np.ndarray


def make_class_task(cfg, n_classes=10, n_test=1000, class_sep=1.0):
    """Latents are ``mu_label + latent_sigma * N(0, I)`` with ``mu_c ~ class_sep * N(0, I)``.

    `cfg.n` training pairs and `n_test` test pairs share one draw of G1, G2;
    the encoders are built from the training observations only.
    """
    rng = np.random.default_rng([cfg.seed, 2])
    means = class_sep * rng.standard_normal((cfg.q, n_classes))
    total = cfg.n + n_test
    labels = rng.integers(0, n_classes, total)
    latents = means[:, labels] + cfg.latent_sigma * rng.standard_normal((cfg.q, total))
    ds = generate(replace(cfg, n=total), latents=latents)
    tr, te = slice(0, cfg.n), slice(cfg.n, total)
    enc1 = optimal_linear_encoder(ds.x1[:, tr], cfg.q)
    enc2 = optimal_linear_encoder(ds.x2[:, tr], cfg.q)
    ids = tuple(f"item{i:06d}" for i in range(total))
    return ClassTask(
        train1=FeatureMatrix(enc1 @ ds.x1[:, tr], ids[tr]),
        train2=FeatureMatrix(enc2 @ ds.x2[:, tr], ids[tr]),
        test1=FeatureMatrix(enc1 @ ds.x1[:, te], ids[te]),
        test2=FeatureMatrix(enc2 @ ds.x2[:, te], ids[te]),
        prototypes=FeatureMatrix(enc2 @ ds.g2 @ means, tuple(f"class{c}" for c in range(n_classes))),
        train_labels=labels[tr],
        test_labels=labels[te],
    )
