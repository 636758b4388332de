"""Experiment configuration: a flat ``key = value`` text format and the typed
:class:`DinofConfig` built from it.

Example file::

    # eight gaussians, cut at 0.6
    tm = 0.6
    sde = vp
    train_iterations = 4000
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError, DinofError
from .samplers import SamplerConfig
from .score import LossWeighting
from .sde import Family, SdeSpec


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _ints(text: str) -> tuple[int, ...]:
    vals = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    if not vals or any(v <= 0 for v in vals):
        raise ValueError(f"expected comma-separated positive integers, got '{text}'")
    return vals


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        v = text.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got '{text}'")
        return v

    return parse


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    return str(value)


REQUIRED = object()

# key -> (parser, default)
KEYS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "tm": (float, REQUIRED),
    "sde": (_choice("ve", "vp", "subvp"), "vp"),
    "sigma_min": (float, 0.01),
    "sigma_max": (float, 50.0),
    "beta_min": (float, 0.1),
    "beta_max": (float, 20.0),
    "T": (float, 1.0),
    "N": (int, 1000),
    "dataset": (_choice("gmm8", "two_moons", "checkerboard", "swiss_roll", "gaussian"), "gmm8"),
    "dim": (int, 2),
    "score_hidden": (_ints, (128, 128, 128)),
    "time_embed_dim": (int, 64),
    "score_scale_by_sigma": (_bool, True),
    "loss_weighting": (_choice("sigma2", "unit"), "sigma2"),
    "train_full_range": (_bool, False),
    "score_lr": (float, 1e-3),
    "flow_blocks": (int, 8),
    "flow_hidden": (int, 64),
    "flow_scale_cap": (float, 2.0),
    "flow_lr": (float, 1e-3),
    "rho": (float, 1.0),
    "freeze_flow_noise": (_bool, False),
    "frozen_pool_size": (int, 8192),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "train_iterations": (int, 4000),
    "batch_size": (int, 512),
    "seed": (int, 0),
    "predictor": (_choice("euler_maruyama", "none"), "euler_maruyama"),
    "corrector": (_choice("langevin", "none"), "langevin"),
    "corrector_steps": (int, 1),
    "snr": (float, 0.16),
    "sampler_steps": (_opt_int, None),
    "denoise_final": (_bool, True),
    "corrector_first": (_bool, True),
    "corrector_at_start": (_bool, True),
    "output_dir": (str, "runs/default"),
    "checkpoint_interval": (int, 1000),
    "eval_samples": (int, 2000),
    "plot": (_bool, True),
    "plot_range": (float, 6.0),
}

# keys that only steer the command front-end, not the model
FRONTEND_KEYS = ("output_dir", "checkpoint_interval", "eval_samples", "plot", "plot_range")


@dataclass(frozen=True)
class DinofConfig:
    tm: float = 0.6
    spec: SdeSpec = field(default_factory=SdeSpec)
    dataset: str = "gmm8"
    dim: int = 2
    score_hidden: tuple[int, ...] = (128, 128, 128)
    time_embed_dim: int = 64
    score_scale_by_sigma: bool = True
    loss_weighting: LossWeighting = LossWeighting.SIGMA2
    train_full_range: bool = False
    score_lr: float = 1e-3
    flow_blocks: int = 8
    flow_hidden: int = 64
    flow_scale_cap: float = 2.0
    flow_lr: float = 1e-3
    rho: float = 1.0
    freeze_flow_noise: bool = False
    frozen_pool_size: int = 8192
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_iterations: int = 4000
    batch_size: int = 512
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sampler_steps: int | None = None

    def __post_init__(self):
        if not 0 < self.tm <= self.spec.T:
            raise ConfigError(f"tm must lie in (0, {self.spec.T}], got {self.tm}", key="tm")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}", key="rho")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if self.train_iterations < 0:
            raise ConfigError("train_iterations must be >= 0", key="train_iterations")
        if self.sampler_steps is not None and self.sampler_steps < 1:
            raise ConfigError("sampler_steps must be >= 1", key="sampler_steps")

    @property
    def reverse_steps(self) -> int:
        """Reverse-SDE steps from ``tm``: ``round(N tm / T)`` unless overridden."""
        if self.sampler_steps is not None:
            return self.sampler_steps
        return max(1, int(round(self.spec.N * self.tm / self.spec.T)))

    def with_tm(self, tm: float) -> "DinofConfig":
        return replace(self, tm=tm)


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines into typed values (no defaults applied)."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected 'key = value', got '{raw.strip()}'", line=lineno)
        key, _, val = (s.strip() for s in line.partition("="))
        values[key] = _convert(key, val, lineno)
    return values


def _convert(key: str, val: str, lineno: int | None = None):
    if key not in KEYS:
        raise ConfigError("unknown key", key=key, line=lineno)
    parser, _ = KEYS[key]
    try:
        return parser(val)
    except ValueError as exc:
        raise ConfigError(str(exc), key=key, line=lineno) from None


def parse_overrides(pairs) -> dict[str, Any]:
    """Turn ``--set key=value`` strings into typed values."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got '{item}'")
        key, _, val = (s.strip() for s in item.partition("="))
        out[key] = _convert(key, val)
    return out


def resolve(values: dict[str, Any]) -> dict[str, Any]:
    """Fill defaults and check required keys; result is ordered like ``KEYS``."""
    for key in values:
        if key not in KEYS:
            raise ConfigError("unknown key", key=key)
    out = {}
    for key, (_, default) in KEYS.items():
        if key in values:
            out[key] = values[key]
        elif default is REQUIRED:
            raise ConfigError("missing required key", key=key)
        else:
            out[key] = default
    return out


def load(path, overrides=None) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = parse_text(text, str(path))
    values.update(parse_overrides(overrides))
    return resolve(values)


def dump(flat: dict[str, Any]) -> str:
    lines = ["# fully resolved experiment configuration"]
    lines += [f"{k} = {_fmt(v)}" for k, v in flat.items()]
    return "\n".join(lines) + "\n"


def build(flat: dict[str, Any]) -> DinofConfig:
    """Typed model configuration from a resolved flat mapping."""
    flat = resolve(flat)
    if not math.isfinite(flat["tm"]):
        raise ConfigError("tm must be finite", key="tm")
    try:
        spec = SdeSpec(
            family=Family(flat["sde"]),
            sigma_min=flat["sigma_min"], sigma_max=flat["sigma_max"],
            beta_min=flat["beta_min"], beta_max=flat["beta_max"],
            T=flat["T"], N=flat["N"],
        )
        reverse = flat["sampler_steps"]
        if reverse is None:
            reverse = max(1, int(round(flat["N"] * flat["tm"] / flat["T"])))
        sampler = SamplerConfig(
            predictor=flat["predictor"], corrector=flat["corrector"],
            corrector_steps=flat["corrector_steps"], snr=flat["snr"], steps=reverse,
            denoise_final=flat["denoise_final"], corrector_first=flat["corrector_first"],
            corrector_at_start=flat["corrector_at_start"],
        )
        return DinofConfig(
            tm=flat["tm"], spec=spec, dataset=flat["dataset"], dim=flat["dim"],
            score_hidden=tuple(flat["score_hidden"]), time_embed_dim=flat["time_embed_dim"],
            score_scale_by_sigma=flat["score_scale_by_sigma"],
            loss_weighting=LossWeighting(flat["loss_weighting"]),
            train_full_range=flat["train_full_range"], score_lr=flat["score_lr"],
            flow_blocks=flat["flow_blocks"], flow_hidden=flat["flow_hidden"],
            flow_scale_cap=flat["flow_scale_cap"], flow_lr=flat["flow_lr"], rho=flat["rho"],
            freeze_flow_noise=flat["freeze_flow_noise"], frozen_pool_size=flat["frozen_pool_size"],
            adam_beta1=flat["adam_beta1"], adam_beta2=flat["adam_beta2"], adam_eps=flat["adam_eps"],
            train_iterations=flat["train_iterations"], batch_size=flat["batch_size"],
            seed=flat["seed"], sampler=sampler, sampler_steps=flat["sampler_steps"],
        )
    except ConfigError:
        raise
    except DinofError as exc:
        raise ConfigError(str(exc)) from None


def flatten(cfg: DinofConfig, frontend: dict[str, Any] | None = None) -> dict[str, Any]:
    """Inverse of :func:`build`, plus any front-end keys."""
    s, smp = cfg.spec, cfg.sampler
    flat = {
        "tm": cfg.tm, "sde": s.family.value, "sigma_min": s.sigma_min, "sigma_max": s.sigma_max,
        "beta_min": s.beta_min, "beta_max": s.beta_max, "T": s.T, "N": s.N,
        "dataset": cfg.dataset, "dim": cfg.dim, "score_hidden": tuple(cfg.score_hidden),
        "time_embed_dim": cfg.time_embed_dim, "score_scale_by_sigma": cfg.score_scale_by_sigma,
        "loss_weighting": cfg.loss_weighting.value, "train_full_range": cfg.train_full_range,
        "score_lr": cfg.score_lr, "flow_blocks": cfg.flow_blocks, "flow_hidden": cfg.flow_hidden,
        "flow_scale_cap": cfg.flow_scale_cap, "flow_lr": cfg.flow_lr, "rho": cfg.rho,
        "freeze_flow_noise": cfg.freeze_flow_noise, "frozen_pool_size": cfg.frozen_pool_size,
        "adam_beta1": cfg.adam_beta1, "adam_beta2": cfg.adam_beta2, "adam_eps": cfg.adam_eps,
        "train_iterations": cfg.train_iterations, "batch_size": cfg.batch_size, "seed": cfg.seed,
        "predictor": smp.predictor.value, "corrector": smp.corrector.value,
        "corrector_steps": smp.corrector_steps, "snr": smp.snr,
        "sampler_steps": cfg.sampler_steps, "denoise_final": smp.denoise_final,
        "corrector_first": smp.corrector_first, "corrector_at_start": smp.corrector_at_start,
    }
    for key in FRONTEND_KEYS:
        flat[key] = (frontend or {}).get(key, KEYS[key][1])
    return resolve(flat)
