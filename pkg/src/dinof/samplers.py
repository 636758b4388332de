"""Reverse-time integrators: Euler-Maruyama predictor, Langevin corrector,
their predictor-corrector composition, and the probability-flow ODE.

A ``score_fn`` is any callable ``(x[batch, d], t: float) -> [batch, d]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import UsageError
from .sde import EPS_FLOOR, SdeSpec, time_grid

ScoreFn = Callable[[np.ndarray, float], np.ndarray]

GAMMA_MAX = 1e-2


class Predictor(str, Enum):
    EULER_MARUYAMA = "euler_maruyama"
    NONE = "none"


class Corrector(str, Enum):
    LANGEVIN = "langevin"
    NONE = "none"


@dataclass(frozen=True)
class SamplerConfig:
    predictor: Predictor = Predictor.EULER_MARUYAMA
    corrector: Corrector = Corrector.LANGEVIN
    corrector_steps: int = 1
    snr: float = 0.16
    steps: int = 1000
    denoise_final: bool = True
    corrector_first: bool = True
    corrector_at_start: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictor", Predictor(self.predictor))
        object.__setattr__(self, "corrector", Corrector(self.corrector))
        if not self.snr > 0:
            raise UsageError(f"snr must be positive, got {self.snr}")
        if self.steps < 1:
            raise UsageError(f"steps must be >= 1, got {self.steps}")
        if self.corrector_steps < 0:
            raise UsageError(f"corrector_steps must be >= 0, got {self.corrector_steps}")


def predictor_step(spec: SdeSpec, score_fn: ScoreFn, x, t: float, dt: float, rng, noise=None):
    """One Euler-Maruyama step of the reverse SDE from ``t`` to ``t - dt``."""
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    g = float(spec.diffusion(t))
    drift = spec.drift_coef(t) * x - g * g * score_fn(x, t)
    w = rng.standard_normal(x.shape) if noise is None else noise
    return x - drift * dt + g * np.sqrt(dt) * w


def langevin_step_size(grad: np.ndarray, noise: np.ndarray, snr: float) -> float:
    """``2 (snr * |w| / |score|)^2`` using batch-mean per-sample norms."""
    grad_norm = float(np.mean(np.linalg.norm(grad.reshape(grad.shape[0], -1), axis=1)))
    noise_norm = float(np.mean(np.linalg.norm(noise.reshape(noise.shape[0], -1), axis=1)))
    if grad_norm == 0.0:
        return GAMMA_MAX
    return 2.0 * (snr * noise_norm / grad_norm) ** 2


def langevin_correct(score_fn: ScoreFn, x, t: float, snr: float, n_steps: int, rng, noise=None):
    """``n_steps`` of ``x <- x + gamma/2 * score + sqrt(gamma) * w``."""
    if n_steps < 0:
        raise UsageError(f"n_steps must be >= 0, got {n_steps}")
    for _ in range(n_steps):
        grad = score_fn(x, t)
        w = rng.standard_normal(x.shape) if noise is None else noise
        gamma = langevin_step_size(grad, w, snr)
        x = x + 0.5 * gamma * grad + np.sqrt(gamma) * w
    return x


def denoise(spec: SdeSpec, score_fn: ScoreFn, x, t: float = EPS_FLOOR):
    """Posterior-mean estimate ``(x + sigma^2 score) / m`` at time ``t``."""
    t = max(t, EPS_FLOOR)
    k = spec.kernel(t)
    return (x + k.std**2 * score_fn(x, t)) / k.mean_coef


def pc_sample(
    spec: SdeSpec,
    score_fn: ScoreFn,
    x_init,
    t_start: float,
    t_end: float,
    config: SamplerConfig,
    rng: np.random.Generator,
    keep_every: int | None = None,
):
    """Integrate the reverse SDE from ``t_start`` down to ``t_end``.

    Returns the final batch, or ``(final, trajectory)`` when ``keep_every``
    is set; the trajectory holds ``x_init`` and every ``keep_every``-th state.
    """
    if not t_start > t_end:
        raise UsageError(f"need t_start > t_end, got {t_start}, {t_end}")
    x = np.array(x_init, dtype=np.float64)
    grid = time_grid(spec, t_start, t_end, config.steps)
    dt = (t_start - t_end) / config.steps
    use_pred = config.predictor is Predictor.EULER_MARUYAMA
    use_corr = config.corrector is Corrector.LANGEVIN and config.corrector_steps > 0
    traj = [x.copy()] if keep_every else None

    def correct(x, t):
        return langevin_correct(score_fn, x, t, config.snr, config.corrector_steps, rng)

    for i, t in enumerate(grid):
        if use_corr and config.corrector_first and (i > 0 or config.corrector_at_start):
            x = correct(x, t)
        if use_pred:
            x = predictor_step(spec, score_fn, x, t, dt, rng)
        if use_corr and not config.corrector_first:
            x = correct(x, max(t - dt, EPS_FLOOR))
        if keep_every and (i + 1) % keep_every == 0:
            traj.append(x.copy())
    if config.denoise_final and (use_pred or use_corr):
        x = denoise(spec, score_fn, x, t_end)
    return (x, traj) if keep_every else x


def ode_step(spec: SdeSpec, score_fn: ScoreFn, x, t: float, dt: float):
    """Euler step of ``dx = [f(t) x - g(t)^2 score / 2] dt`` backwards by ``dt``."""
    g = float(spec.diffusion(t))
    return x - (spec.drift_coef(t) * x - 0.5 * g * g * score_fn(x, t)) * dt


def ode_sample(spec: SdeSpec, score_fn: ScoreFn, x, t_grid) -> np.ndarray:
    """Deterministic integration along a descending grid (both endpoints included)."""
    t_grid = [float(t) for t in t_grid]
    if any(b >= a for a, b in zip(t_grid[:-1], t_grid[1:])):
        raise UsageError("ODE grid must be strictly descending")
    x = np.array(x, dtype=np.float64)
    for a, b in zip(t_grid[:-1], t_grid[1:]):
        x = ode_step(spec, score_fn, x, a, a - b)
    return x
