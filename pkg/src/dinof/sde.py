"""Linear forward SDEs (VE, VP, sub-VP), their Gaussian perturbation kernels,
and the reverse-time grid.

All three families have drift ``f(t) * x`` with scalar ``f``, so the kernel
``p_0t(x(t) | x(0))`` is ``N(m(t) x(0), sigma(t)^2 I)`` in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError, UsageError

EPS_FLOOR = 1e-5


class Family(str, Enum):
    VE = "ve"
    VP = "vp"
    SUBVP = "subvp"


@dataclass(frozen=True)
class KernelStats:
    mean_coef: float
    std: float


@dataclass(frozen=True)
class SdeSpec:
    family: Family = Family.VP
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0
    N: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.T > 0:
            raise UsageError(f"T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise UsageError(f"N must be an integer >= 2, got {self.N}")
        if self.family is Family.VE:
            if not 0 < self.sigma_min < self.sigma_max:
                raise UsageError(
                    f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
                )
        elif not 0 < self.beta_min <= self.beta_max:
            # beta_min == beta_max (constant schedule) is allowed for test oracles
            raise UsageError(
                f"need 0 < beta_min <= beta_max, got {self.beta_min}, {self.beta_max}"
            )

    def _check_t(self, t):
        ta = np.asarray(t, dtype=np.float64)
        if np.any(ta < 0) or np.any(ta > self.T) or np.any(~np.isfinite(ta)):
            raise DomainError(f"t must lie in [0, {self.T}], got {t!r}")
        return ta

    def beta(self, t):
        return self.beta_min + t * (self.beta_max - self.beta_min) / self.T

    def beta_integral(self, t):
        """Integral of beta over [0, t]."""
        return self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.T)

    def drift_coef(self, t):
        """Scalar f(t) with drift f(x, t) = f(t) x."""
        ta = self._check_t(t)
        if self.family is Family.VE:
            return np.zeros_like(ta)[()]
        return (-0.5 * self.beta(ta))[()]

    def drift(self, x, t):
        return self.drift_coef(t) * np.asarray(x, dtype=np.float64)

    def diffusion(self, t):
        ta = self._check_t(t)
        if self.family is Family.VE:
            ratio = self.sigma_max / self.sigma_min
            sig = self.sigma_min * ratio ** (ta / self.T)
            return (sig * math.sqrt(2.0 * math.log(ratio) / self.T))[()]
        b = self.beta(ta)
        if self.family is Family.VP:
            return np.sqrt(b)[()]
        return np.sqrt(b * -np.expm1(-2.0 * self.beta_integral(ta)))[()]

    def mean_coef(self, t):
        ta = self._check_t(t)
        if self.family is Family.VE:
            return np.ones_like(ta)[()]
        return np.exp(-0.5 * self.beta_integral(ta))[()]

    def std(self, t):
        ta = self._check_t(t)
        if self.family is Family.VE:
            return (self.sigma_min * (self.sigma_max / self.sigma_min) ** (ta / self.T))[()]
        decay = -np.expm1(-self.beta_integral(ta))
        if self.family is Family.VP:
            return np.sqrt(decay)[()]
        return decay[()]

    def kernel(self, t: float) -> KernelStats:
        return KernelStats(float(self.mean_coef(t)), float(self.std(t)))

    def prior_std(self) -> float:
        """Std of the terminal prior used by the plain reverse sampler."""
        return self.sigma_max if self.family is Family.VE else 1.0


def drift(spec: SdeSpec, x, t):
    return spec.drift(x, t)


def diffusion(spec: SdeSpec, t):
    return spec.diffusion(t)


def perturbation_kernel(spec: SdeSpec, t: float) -> KernelStats:
    return spec.kernel(t)


def sample_marginal(spec: SdeSpec, x0, t, rng: np.random.Generator):
    """Draw ``x(t) = m(t) x0 + sigma(t) eps``; returns ``(x_t, eps)``.

    ``t`` may be a scalar or one time per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = rng.standard_normal(x0.shape)
    m = np.asarray(spec.mean_coef(t))
    s = np.asarray(spec.std(t))
    if m.ndim == 1:
        m = m[:, None]
        s = s[:, None]
    return m * x0 + s * noise, noise


def time_grid(spec: SdeSpec, t_start: float, t_end: float, steps: int) -> list[float]:
    """Descending grid ``t_start - i (t_start - t_end) / steps`` for i < steps.

    The grid holds the times at which the score is evaluated; the final
    integration step lands on ``t_end`` and any terminal evaluation there is
    clamped to ``EPS_FLOOR``.
    """
    if not 0 <= t_end < t_start <= spec.T:
        raise UsageError(f"need 0 <= t_end < t_start <= {spec.T}, got {t_start}, {t_end}")
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")
    h = (t_start - t_end) / steps
    return [t_start - i * h for i in range(steps)]


def steps_for(spec: SdeSpec, t_start: float) -> int:
    """Number of reverse steps covering ``[0, t_start]`` at the spec's N scales."""
    return int(round(spec.N * t_start / spec.T))
