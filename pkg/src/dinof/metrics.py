"""Two-sample statistics and GMM diagnostics used as sample-quality metrics.

Pairwise work is done in row blocks so 10^4 x 10^4 comparisons never
materialize a full distance matrix. Blocks may run on worker threads
(``DINOF_THREADS``); partial sums are always reduced in block order, so
results do not depend on the thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import ToyDistribution
from .errors import UsageError
from .sde import SdeSpec

_BLOCK_ELEMS = 1 << 22


def worker_threads() -> int:
    try:
        n = int(os.environ.get("DINOF_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def _as_2d(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise UsageError(f"{name} must be a non-empty [n, d] array, got shape {a.shape}")
    return a


def _blocks(n_rows, n_cols):
    step = max(1, _BLOCK_ELEMS // max(n_cols, 1))
    return [(i, min(i + step, n_rows)) for i in range(0, n_rows, step)]


def _map_blocks(fn, blocks):
    threads = worker_threads()
    if threads == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, blocks))


def _dist(a, b):
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def _sq_dist(a, b):
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None] - 2.0 * a @ b.T, 0.0)


def _pair_sum(a, b, kernel=_dist):
    parts = _map_blocks(lambda blk: kernel(a[blk[0]:blk[1]], b).sum(), _blocks(len(a), len(b)))
    return float(np.sum(parts))


def energy_distance(a, b, unbiased: bool = False) -> float:
    """``2 E|a-b| - E|a-a'| - E|b-b'|``.

    The default V-statistic averages within-sample terms over all pairs
    including ``i == j``; it is non-negative and exactly zero when ``a`` and
    ``b`` are the same point set. ``unbiased=True`` excludes the diagonal.
    """
    a = _as_2d(a, "a")
    b = _as_2d(b, "b")
    n, m = len(a), len(b)
    s_ab = _pair_sum(a, b)
    s_aa = _pair_sum(a, a)
    s_bb = _pair_sum(b, b)
    if unbiased:
        if n < 2 or m < 2:
            raise UsageError("unbiased energy distance needs at least 2 points per sample")
        return 2.0 * s_ab / (n * m) - s_aa / (n * (n - 1)) - s_bb / (m * (m - 1))
    return 2.0 * s_ab / (n * m) - s_aa / (n * n) - s_bb / (m * m)


def median_bandwidth(a, b, max_points: int = 1000) -> float:
    """Median pairwise distance over the pooled sample (first ``max_points`` of each)."""
    a = _as_2d(a, "a")[:max_points]
    b = _as_2d(b, "b")[:max_points]
    z = np.concatenate([a, b])
    d = _dist(z, z)[np.triu_indices(len(z), k=1)]
    h = float(np.median(d)) if d.size else 1.0
    return h if h > 0 else 1.0


def mmd_rbf(a, b, bandwidth: float | None = None) -> float:
    """Unbiased MMD^2 with a Gaussian kernel (median-heuristic bandwidth by default).

    Being unbiased, the estimate can dip slightly below zero when both samples
    share a distribution.
    """
    a = _as_2d(a, "a")
    b = _as_2d(b, "b")
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise UsageError("MMD needs at least 2 points per sample")
    h = median_bandwidth(a, b) if bandwidth is None else bandwidth

    def k(x, y):
        return np.exp(-_sq_dist(x, y) / (2.0 * h * h))

    k_aa = _pair_sum(a, a, k) - n
    k_bb = _pair_sum(b, b, k) - m
    k_ab = _pair_sum(a, b, k)
    return k_aa / (n * (n - 1)) + k_bb / (m * (m - 1)) - 2.0 * k_ab / (n * m)


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    null: np.ndarray
    p_value: float

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.null, q))


def energy_permutation_test(a, b, n_perm: int = 200, rng: np.random.Generator | None = None) -> PermutationResult:
    """Permutation null of the V-statistic energy distance.

    Uses the pooled distance matrix ``D`` only through ``D @ S`` for a label
    matrix ``S`` (one column per relabeling), computed block by block.
    """
    a = _as_2d(a, "a")
    b = _as_2d(b, "b")
    rng = np.random.default_rng() if rng is None else rng
    z = np.concatenate([a, b])
    n, m = len(a), len(b)
    big = n + m
    labels = np.zeros((big, n_perm + 1))
    labels[:n, 0] = 1.0
    for p in range(1, n_perm + 1):
        labels[rng.permutation(big)[:n], p] = 1.0

    def block(blk):
        lo, hi = blk
        d = _dist(z[lo:hi], z)
        ds = d @ labels
        return (labels[lo:hi] * ds).sum(0), ds.sum(0), d.sum()

    parts = _map_blocks(block, _blocks(big, big))
    s_aa = np.sum([p[0] for p in parts], axis=0)  # s^T D s
    col = np.sum([p[1] for p in parts], axis=0)  # 1^T D s
    total = float(np.sum([p[2] for p in parts]))
    s_ab = col - s_aa
    s_bb = total - 2.0 * col + s_aa
    stats = 2.0 * s_ab / (n * m) - s_aa / (n * n) - s_bb / (m * m)
    observed, null = float(stats[0]), stats[1:]
    p_value = (1.0 + np.sum(null >= observed)) / (n_perm + 1.0)
    return PermutationResult(observed, null, float(p_value))


def mmd_permutation_test(a, b, n_perm: int = 200, rng: np.random.Generator | None = None) -> PermutationResult:
    """Permutation null of unbiased MMD^2 with the bandwidth frozen from the observed split."""
    a = _as_2d(a, "a")
    b = _as_2d(b, "b")
    rng = np.random.default_rng() if rng is None else rng
    h = median_bandwidth(a, b)
    z = np.concatenate([a, b])
    n = len(a)
    observed = mmd_rbf(a, b, h)
    null = np.empty(n_perm)
    for p in range(n_perm):
        idx = rng.permutation(len(z))
        null[p] = mmd_rbf(z[idx[:n]], z[idx[n:]], h)
    p_value = (1.0 + np.sum(null >= observed)) / (n_perm + 1.0)
    return PermutationResult(observed, null, float(p_value))


def score_mse(score_fn, dist: ToyDistribution, spec: SdeSpec, t_grid, n: int = 2048,
              rng: np.random.Generator | None = None, relative: bool = False) -> float:
    """Mean ``|score_fn - true score|^2`` over ``t_grid`` x ``n`` diffused data points.

    With ``relative=True`` the result is divided by the mean squared norm of
    the true score over the same points.
    """
    mixture = dist.mixture()
    rng = np.random.default_rng() if rng is None else rng
    err = ref = 0.0
    for t in t_grid:
        t = float(t)
        x0 = dist.sample(n, rng)
        xt = spec.mean_coef(t) * x0 + spec.std(t) * rng.standard_normal(x0.shape)
        true = mixture.diffused(spec, t).score(xt)
        err += float(np.mean(np.sum((score_fn(xt, t) - true) ** 2, axis=1)))
        ref += float(np.mean(np.sum(true**2, axis=1)))
    return err / ref if relative else err / len(t_grid)


def mode_occupancy(a, dist: ToyDistribution, radius_sd: float = 3.0) -> np.ndarray:
    """Fraction of all samples assigned to each GMM mode within ``radius_sd`` mode stds."""
    a = _as_2d(a, "a")
    sd = dist.mode_std
    means = dist.mixture().means
    d = _dist(a, means)
    nearest = d.argmin(axis=1)
    ok = d[np.arange(len(a)), nearest] <= radius_sd * sd
    return np.bincount(nearest[ok], minlength=len(means)) / len(a)


def mode_coverage(a, dist: ToyDistribution, min_fraction: float = 0.01) -> float:
    """Fraction of GMM modes holding at least ``min_fraction`` of the samples."""
    occ = mode_occupancy(a, dist)
    return float(np.mean(occ >= min_fraction))


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    mmd_rbf: float
    score_mse: float | None = None
    mode_coverage: float | None = None

    def rows(self):
        out = [("energy_distance", self.energy_distance), ("mmd_rbf", self.mmd_rbf)]
        if self.score_mse is not None:
            out.append(("score_mse", self.score_mse))
        if self.mode_coverage is not None:
            out.append(("mode_coverage", self.mode_coverage))
        return out


def evaluate(a, b, dist: ToyDistribution | None = None, score_fn=None, spec=None, t_grid=None,
             rng=None) -> MetricReport:
    cov = mse = None
    if dist is not None and dist.kind.value == "gmm8":
        cov = mode_coverage(a, dist)
    if score_fn is not None and dist is not None and dist.has_mixture:
        mse = score_mse(score_fn, dist, spec, t_grid, rng=rng)
    return MetricReport(energy_distance(a, b), mmd_rbf(a, b), mse, cov)
