"""Invertible flow for vector data: K blocks of [ActNorm, Permutation, AffineCoupling].

Every layer maps ``h -> h'`` with a per-sample log|det| contribution; the
flow composes them in order and the inverse walks the same list backwards.
Each layer has two forward paths: a tape-aware one built from
:mod:`dinof.autodiff` ops (for training) and a plain numpy one (for sampling).
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FlowStateError, UsageError

LOG_2PI = float(np.log(2.0 * np.pi))


class ActNorm:
    """``y = x * exp(log_scale) + bias`` with data-dependent initialization."""

    kind = "actnorm"

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim
        self.initialized = False

    def param_shapes(self):
        return {f"{self.name}.log_scale": (self.dim,), f"{self.name}.bias": (self.dim,)}

    def init_params(self, rng):
        return {k: np.zeros(s) for k, s in self.param_shapes().items()}

    def data_init(self, params, h: np.ndarray):
        mu = h.mean(axis=0)
        sd = h.std(axis=0)
        sd = np.where(sd > 1e-6, sd, 1.0)
        params[f"{self.name}.log_scale"] = -np.log(sd)
        params[f"{self.name}.bias"] = -mu / sd
        self.initialized = True

    def forward(self, h: Tensor, params: Mapping[str, Tensor]):
        n = h.shape[0]
        ls = params[f"{self.name}.log_scale"]
        y = ad.add(ad.mul(h, ad.broadcast(ad.exp(ls), n)), ad.broadcast(params[f"{self.name}.bias"], n))
        return y, ad.broadcast(ad.sum(ls), n)

    def forward_np(self, h, params):
        ls = params[f"{self.name}.log_scale"]
        return h * np.exp(ls) + params[f"{self.name}.bias"], np.full(h.shape[0], ls.sum())

    def inverse_np(self, y, params):
        return (y - params[f"{self.name}.bias"]) * np.exp(-params[f"{self.name}.log_scale"])


class Permutation:
    """Fixed coordinate shuffle; log|det| is zero."""

    kind = "permutation"

    def __init__(self, name: str, perm: np.ndarray):
        self.name = name
        self.perm = np.asarray(perm, dtype=np.int64)
        self.inv = np.argsort(self.perm)
        d = len(self.perm)
        # column j of the output takes input column perm[j]
        self.matrix = np.zeros((d, d))
        self.matrix[self.perm, np.arange(d)] = 1.0

    def param_shapes(self):
        return {}

    def init_params(self, rng):
        return {}

    def forward(self, h: Tensor, params):
        return ad.matmul(h, Tensor(self.matrix)), None

    def forward_np(self, h, params):
        return h[:, self.perm], np.zeros(h.shape[0])

    def inverse_np(self, y, params):
        return y[:, self.inv]


class AffineCoupling:
    """First ``d // 2`` coordinates condition a scale-and-shift of the rest.

    Log-scales pass through ``cap * tanh(raw / cap)`` so they stay in
    ``(-cap, cap)``; the conditioner head starts at zero (identity map).
    """

    kind = "coupling"

    def __init__(self, name: str, dim: int, hidden: int, scale_cap: float = 2.0):
        if dim < 2:
            raise UsageError("affine coupling needs dim >= 2")
        self.name = name
        self.dim = dim
        self.split = dim // 2
        self.hidden = hidden
        self.scale_cap = scale_cap

    def param_shapes(self):
        d1, d2, h, p = self.split, self.dim - self.split, self.hidden, self.name
        return {
            f"{p}.w0": (d1, h), f"{p}.b0": (h,),
            f"{p}.w1": (h, h), f"{p}.b1": (h,),
            f"{p}.w_out": (h, 2 * d2), f"{p}.b_out": (2 * d2,),
        }

    def init_params(self, rng):
        out = {}
        for k, s in self.param_shapes().items():
            if k.endswith(("w0", "w1")):
                out[k] = rng.standard_normal(s) * np.sqrt(2.0 / (s[0] + s[1]))
            else:
                out[k] = np.zeros(s)
        return out

    def _cond(self, x1: Tensor, params):
        p = self.name
        h = ad.tanh(ad.affine(x1, params[f"{p}.w0"], params[f"{p}.b0"]))
        h = ad.tanh(ad.affine(h, params[f"{p}.w1"], params[f"{p}.b1"]))
        raw = ad.affine(h, params[f"{p}.w_out"], params[f"{p}.b_out"])
        raw_s, shift = ad.split(raw, self.dim - self.split, axis=1)
        log_s = ad.scale(ad.tanh(ad.scale(raw_s, 1.0 / self.scale_cap)), self.scale_cap)
        return log_s, shift

    def _cond_np(self, x1, params):
        p = self.name
        h = np.tanh(x1 @ params[f"{p}.w0"] + params[f"{p}.b0"])
        h = np.tanh(h @ params[f"{p}.w1"] + params[f"{p}.b1"])
        raw = h @ params[f"{p}.w_out"] + params[f"{p}.b_out"]
        d2 = self.dim - self.split
        log_s = self.scale_cap * np.tanh(raw[:, :d2] / self.scale_cap)
        return log_s, raw[:, d2:]

    def forward(self, h: Tensor, params):
        x1, x2 = ad.split(h, self.split, axis=1)
        log_s, shift = self._cond(x1, params)
        y2 = ad.add(ad.mul(x2, ad.exp(log_s)), shift)
        return ad.concat([x1, y2], axis=1), ad.sum(log_s, axis=1)

    def forward_np(self, h, params):
        x1, x2 = h[:, : self.split], h[:, self.split:]
        log_s, shift = self._cond_np(x1, params)
        return np.concatenate([x1, x2 * np.exp(log_s) + shift], axis=1), log_s.sum(axis=1)

    def inverse_np(self, y, params):
        y1, y2 = y[:, : self.split], y[:, self.split:]
        log_s, shift = self._cond_np(y1, params)
        return np.concatenate([y1, (y2 - shift) * np.exp(-log_s)], axis=1)


def _random_permutation(rng, d):
    if d < 2:
        return np.arange(d)
    # redraw identities so every block actually mixes the coupling halves
    while True:
        perm = rng.permutation(d)
        if np.any(perm != np.arange(d)):
            return perm


class FlowModel:
    def __init__(
        self,
        dim: int,
        n_blocks: int = 16,
        hidden: int = 256,
        scale_cap: float = 2.0,
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim = dim
        self.n_blocks = n_blocks
        self.hidden = hidden
        self.scale_cap = scale_cap
        self.layers = []
        for k in range(n_blocks):
            self.layers.append(ActNorm(f"block{k}.actnorm", dim))
            self.layers.append(Permutation(f"block{k}.perm", _random_permutation(rng, dim)))
            self.layers.append(AffineCoupling(f"block{k}.coupling", dim, hidden, scale_cap))
        self.params: dict[str, np.ndarray] = {}
        for layer in self.layers:
            self.params.update(layer.init_params(rng))

    @property
    def initialized(self) -> bool:
        return all(l.initialized for l in self.layers if isinstance(l, ActNorm))

    @initialized.setter
    def initialized(self, flag: bool):
        for l in self.layers:
            if isinstance(l, ActNorm):
                l.initialized = flag

    def permutations(self) -> list[list[int]]:
        return [l.perm.tolist() for l in self.layers if isinstance(l, Permutation)]

    def set_permutations(self, perms):
        it = iter(perms)
        for i, l in enumerate(self.layers):
            if isinstance(l, Permutation):
                self.layers[i] = Permutation(l.name, np.asarray(next(it)))

    def layer_inventory(self) -> list[dict]:
        return [{"name": l.name, "kind": l.kind} for l in self.layers]

    def initialize(self, x) -> None:
        """Data-dependent ActNorm initialization from one batch."""
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            if isinstance(layer, ActNorm) and not layer.initialized:
                layer.data_init(self.params, h)
            h, _ = layer.forward_np(h, self.params)

    def _check(self, x_shape):
        if len(x_shape) != 2 or x_shape[1] != self.dim:
            raise UsageError(f"flow expects [batch, {self.dim}] input, got {tuple(x_shape)}")

    def _ready(self, x, strict):
        if not self.initialized:
            if strict:
                raise FlowStateError("ActNorm layers are uninitialized; call initialize() first")
            self.initialize(x)

    def forward(self, x: Tensor, params: Mapping[str, Tensor] | None = None, strict=False):
        """Tape-aware ``(z, logdet)``; ``logdet`` has shape [batch]."""
        self._check(x.shape)
        self._ready(x.data, strict)
        if params is None:
            params = {k: Tensor(v) for k, v in self.params.items()}
        h, logdet = x, None
        for layer in self.layers:
            h, ld = layer.forward(h, params)
            if ld is not None:
                logdet = ld if logdet is None else ad.add(logdet, ld)
        if logdet is None:
            logdet = Tensor(np.zeros(x.shape[0]))
        return h, logdet

    def forward_np(self, x, strict=False):
        x = np.asarray(x, dtype=np.float64)
        self._check(x.shape)
        self._ready(x, strict)
        logdet = np.zeros(x.shape[0])
        for layer in self.layers:
            x, ld = layer.forward_np(x, self.params)
            logdet = logdet + ld
        return x, logdet

    def inverse(self, z, strict=False):
        z = np.asarray(z, dtype=np.float64)
        self._check(z.shape)
        if strict and not self.initialized:
            raise FlowStateError("ActNorm layers are uninitialized; call initialize() first")
        for layer in reversed(self.layers):
            z = layer.inverse_np(z, self.params)
        return z

    def log_prob(self, x) -> np.ndarray:
        z, logdet = self.forward_np(x)
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * self.dim * LOG_2PI + logdet


def flow_forward(model: FlowModel, x, strict=False):
    return model.forward_np(x, strict=strict)


def flow_inverse(model: FlowModel, z, strict=False):
    return model.inverse(z, strict=strict)


def flow_nll(model: FlowModel, x, params: Mapping[str, Tensor] | None = None, strict=False) -> Tensor:
    """Mean negative log-likelihood under a standard-normal base, as a scalar tensor."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    z, logdet = model.forward(xt, params, strict=strict)
    d = model.dim
    half_sq = ad.scale(ad.sum(ad.square(z), axis=1), 0.5)
    nll_rows = ad.sub(ad.add(half_sq, Tensor(np.full(z.shape[0], 0.5 * d * LOG_2PI))), logdet)
    return ad.mean(nll_rows)
