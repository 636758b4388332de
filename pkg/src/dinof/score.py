"""Time-conditioned MLP score network and the denoising score-matching loss."""
from __future__ import annotations

from enum import Enum
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import GaussianMixture
from .errors import UsageError
from .sde import EPS_FLOOR, SdeSpec


class LossWeighting(str, Enum):
    SIGMA2 = "sigma2"
    UNIT = "unit"


def time_embedding(t, dim: int = 64) -> np.ndarray:
    """Sinusoidal features with frequencies geometric in [1, 1000]; shape [batch, dim]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.geomspace(1.0, 1000.0, dim // 2)
    ang = t[:, None] * freqs[None]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _glorot(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / (fan_in + fan_out))


class ScoreModel:
    """MLP ``s(x, t)`` over ``concat(x, embed(t))`` with tanh hidden layers.

    When ``sigma_spec`` is given the raw network output is divided by the
    kernel std ``sigma(t)`` of that SDE, so the network itself only has to
    predict the (unit-scale) negative noise.
    """

    def __init__(
        self,
        dim: int,
        hidden: tuple[int, ...] = (128, 128, 128),
        embed_dim: int = 64,
        sigma_spec: SdeSpec | None = None,
        rng: np.random.Generator | None = None,
        zero_head: bool = False,
    ):
        if embed_dim % 2:
            raise UsageError(f"embed_dim must be even, got {embed_dim}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim = dim
        self.hidden = tuple(hidden)
        self.embed_dim = embed_dim
        self.sigma_spec = sigma_spec
        self.params: dict[str, np.ndarray] = {}
        widths = (dim + embed_dim,) + self.hidden
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.params[f"w{i}"] = _glorot(rng, a, b)
            self.params[f"b{i}"] = np.zeros(b)
        head = np.zeros((widths[-1], dim)) if zero_head else _glorot(rng, widths[-1], dim)
        self.params["w_out"] = head
        self.params["b_out"] = np.zeros(dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden)

    def _check(self, x_shape, t):
        if len(x_shape) != 2 or x_shape[1] != self.dim:
            raise UsageError(f"score model expects [batch, {self.dim}] input, got {tuple(x_shape)}")
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 1 and t.shape[0] != x_shape[0]:
            raise UsageError(f"got {t.shape[0]} times for a batch of {x_shape[0]}")
        return t

    def forward(self, x: Tensor, t, params: Mapping[str, Tensor] | None = None) -> Tensor:
        """Differentiable evaluation; ``params`` are tape-watched copies of ``self.params``."""
        t = self._check(x.shape, t)
        n = x.shape[0]
        if params is None:
            params = {k: Tensor(v) for k, v in self.params.items()}
        t_rows = np.broadcast_to(t, (n,))
        h = ad.concat([x, Tensor(time_embedding(t_rows, self.embed_dim))], axis=1)
        for i in range(self.n_layers):
            h = ad.tanh(ad.affine(h, params[f"w{i}"], params[f"b{i}"]))
        out = ad.affine(h, params["w_out"], params["b_out"])
        if self.sigma_spec is not None:
            inv = 1.0 / np.asarray(self.sigma_spec.std(t_rows))
            out = ad.mul(out, Tensor(np.repeat(inv[:, None], self.dim, axis=1)))
        return out

    def __call__(self, x, t) -> np.ndarray:
        """Plain numpy evaluation for samplers; ``t`` scalar or one per row."""
        x = np.asarray(x, dtype=np.float64)
        t = self._check(x.shape, t)
        p = self.params
        w0 = p["w0"]
        wx, wt = w0[: self.dim], w0[self.dim:]
        if t.ndim == 0:
            # shared time: fold the embedding into the first-layer bias
            bias = time_embedding(t, self.embed_dim)[0] @ wt + p["b0"]
            h = np.tanh(x @ wx + bias)
        else:
            h = np.tanh(x @ wx + time_embedding(t, self.embed_dim) @ wt + p["b0"])
        for i in range(1, self.n_layers):
            h = np.tanh(h @ p[f"w{i}"] + p[f"b{i}"])
        out = h @ p["w_out"] + p["b_out"]
        if self.sigma_spec is not None:
            sig = np.asarray(self.sigma_spec.std(t))
            out = out / (sig[:, None] if sig.ndim == 1 else sig)
        return out


def score(model: ScoreModel, x, t) -> np.ndarray:
    return model(x, t)


def dsm_loss(
    model: ScoreModel,
    spec: SdeSpec,
    x0,
    weighting: LossWeighting | str = LossWeighting.SIGMA2,
    rng: np.random.Generator | None = None,
    t_max: float | None = None,
    params: Mapping[str, Tensor] | None = None,
    t=None,
    noise=None,
) -> Tensor:
    """Denoising score matching on ``t ~ U[EPS_FLOOR, t_max)``.

    Returns ``mean_b lambda(t) || s(x_t, t) + eps / sigma(t) ||^2`` as a scalar
    tensor, differentiable w.r.t. ``params`` when those are watched. Explicit
    per-row ``t`` and ``noise`` replace the random draws.
    """
    weighting = LossWeighting(weighting)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise UsageError(f"dsm_loss needs a non-empty [batch, d] array, got {x0.shape}")
    rng = np.random.default_rng() if rng is None else rng
    t_max = spec.T if t_max is None else t_max
    n, d = x0.shape
    if t is None:
        t = EPS_FLOOR + (t_max - EPS_FLOOR) * rng.random(n)
    t = np.asarray(t, dtype=np.float64)
    sig = np.asarray(spec.std(t))
    xt = np.asarray(spec.mean_coef(t))[:, None] * x0
    eps = rng.standard_normal(x0.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    xt = xt + sig[:, None] * eps
    s = model.forward(Tensor(xt), t, params)
    sig_rows = np.repeat(sig[:, None], d, axis=1)
    if weighting is LossWeighting.SIGMA2:
        resid = ad.add(ad.mul(s, Tensor(sig_rows)), Tensor(eps))
    else:
        resid = ad.add(s, Tensor(eps / sig_rows))
    return ad.mean(ad.sum(ad.square(resid), axis=1))


def analytic_gmm_score(mixture: GaussianMixture, x, t: float, spec: SdeSpec) -> np.ndarray:
    """Exact score of the mixture diffused to time ``t`` under ``spec``."""
    return mixture.diffused(spec, t).score(x)


def analytic_score_fn(mixture: GaussianMixture, spec: SdeSpec):
    """Wrap :func:`analytic_gmm_score` as a sampler ``score_fn(x, t)``."""

    def fn(x, t):
        return analytic_gmm_score(mixture, x, float(t), spec)

    return fn
