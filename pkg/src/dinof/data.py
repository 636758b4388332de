"""Low-dimensional toy distributions with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .errors import UsageError
from .sde import SdeSpec

GMM8_RADIUS = 4.0
GMM8_STD = 0.15


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray  # [K]
    means: np.ndarray  # [K, d]
    covs: np.ndarray  # [K, d, d]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def diffused(self, spec: SdeSpec, t: float) -> "GaussianMixture":
        """Marginal at time ``t`` of the forward SDE started from this mixture."""
        m = float(spec.mean_coef(t))
        s = float(spec.std(t))
        eye = np.eye(self.dim)
        return GaussianMixture(self.weights, m * self.means, m * m * self.covs + s * s * eye)

    def _terms(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        prec = np.linalg.inv(self.covs)  # [K, d, d]
        _, logdet = np.linalg.slogdet(self.covs)
        diff = x[:, None, :] - self.means[None]  # [n, K, d]
        pdiff = np.einsum("kij,nkj->nki", prec, diff)
        maha = np.einsum("nki,nki->nk", diff, pdiff)
        logp = (
            np.log(self.weights)[None]
            - 0.5 * (maha + logdet[None] + self.dim * np.log(2.0 * np.pi))
        )
        return logp, pdiff

    def log_prob(self, x) -> np.ndarray:
        logp, _ = self._terms(x)
        return logsumexp(logp, axis=1)

    def score(self, x) -> np.ndarray:
        logp, pdiff = self._terms(x)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        return -np.einsum("nk,nki->ni", resp, pdiff)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        chol = np.linalg.cholesky(self.covs)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)


class Kind(str, Enum):
    GMM8 = "gmm8"
    TWO_MOONS = "two_moons"
    CHECKERBOARD = "checkerboard"
    SWISS_ROLL = "swiss_roll"
    SINGLE_GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ToyDistribution:
    kind: Kind
    dim: int = 2
    mean: tuple[float, ...] | None = None
    cov: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind in (Kind.TWO_MOONS, Kind.CHECKERBOARD, Kind.SWISS_ROLL) and self.dim != 2:
            raise UsageError(f"{self.kind.value} is only defined for dim=2")
        if not 1 <= self.dim <= 64:
            raise UsageError(f"dim must be in [1, 64], got {self.dim}")

    @property
    def has_mixture(self) -> bool:
        return self.kind in (Kind.GMM8, Kind.SINGLE_GAUSSIAN)

    def mixture(self) -> GaussianMixture:
        """Exact Gaussian-mixture form (GMM kinds only)."""
        d = self.dim
        if self.kind is Kind.GMM8:
            if d == 2:
                ang = 2.0 * np.pi * np.arange(8) / 8
                means = GMM8_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            else:
                # beyond the plane, modes sit at +-radius on each coordinate axis
                eye = np.eye(d)
                means = GMM8_RADIUS * np.concatenate([eye, -eye])
            k = len(means)
            covs = np.broadcast_to(GMM8_STD**2 * np.eye(d), (k, d, d)).copy()
            return GaussianMixture(np.full(k, 1.0 / k), means, covs)
        if self.kind is Kind.SINGLE_GAUSSIAN:
            mu = np.zeros(d) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
            cov = np.eye(d) if self.cov is None else np.asarray(self.cov, dtype=np.float64)
            return GaussianMixture(np.ones(1), mu[None], cov[None])
        raise UsageError(f"{self.kind.value} has no closed-form mixture")

    @property
    def mode_std(self) -> float:
        if self.kind is not Kind.GMM8:
            raise UsageError(f"mode statistics undefined for {self.kind.value}")
        return GMM8_STD

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_dataset(self, n, rng)


def sample_dataset(dist: ToyDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from ``dist`` as an array of shape [n, dim]."""
    if n < 0:
        raise UsageError(f"n must be non-negative, got {n}")
    kind = dist.kind
    if dist.has_mixture:
        return dist.mixture().sample(n, rng)
    if kind is Kind.TWO_MOONS:
        upper = rng.random(n) < 0.5
        theta = np.pi * rng.random(n)
        x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
        pts = np.stack([x - 0.5, y - 0.25], axis=1) * 2.0
        return pts + 0.1 * rng.standard_normal((n, 2))
    if kind is Kind.CHECKERBOARD:
        x1 = rng.random(n) * 4.0 - 2.0
        x2 = rng.random(n) - rng.integers(0, 2, n) * 2.0
        x2 = x2 + (np.floor(x1) % 2)
        return np.stack([x1, x2], axis=1) * 2.0
    if kind is Kind.SWISS_ROLL:
        t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
        pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 3.0
        return pts + 0.1 * rng.standard_normal((n, 2))
    raise UsageError(f"unknown distribution kind {kind!r}")


def get_distribution(name: str, dim: int = 2) -> ToyDistribution:
    try:
        kind = Kind(name.lower())
    except ValueError:
        names = ", ".join(k.value for k in Kind)
        raise UsageError(f"unknown dataset '{name}' (expected one of: {names})") from None
    return ToyDistribution(kind, dim)
