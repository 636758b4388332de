"""Joint score/flow training and the hybrid flow-prior sampler.

The forward process runs the linear SDE only up to the cut time ``tm``. A
normalizing flow is fit to the noised marginal at ``tm``; sampling draws
``z ~ N(0, I)``, maps it through the inverse flow to get ``x(tm)`` and then
runs the reverse SDE from ``tm`` down to 0.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor
from .config import DinofConfig
from .data import ToyDistribution, get_distribution
from .errors import NonFiniteLossError, UsageError
from .flow import FlowModel, flow_nll
from .samplers import pc_sample
from .score import ScoreModel, dsm_loss
from .sde import sample_marginal


@dataclass
class Losses:
    score_loss: float
    flow_nll: float


@dataclass
class TrainState:
    config: DinofConfig
    score: ScoreModel
    flow: FlowModel
    score_opt: AdamState
    flow_opt: AdamState
    iteration: int
    rng: np.random.Generator
    dist: ToyDistribution
    frozen_pool: np.ndarray | None = None

    @property
    def score_keys(self) -> list[str]:
        return list(self.score.params)

    @property
    def flow_keys(self) -> list[str]:
        return list(self.flow.params)


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag])


def init_state(config: DinofConfig) -> TrainState:
    """Fresh models and optimizer state, fully determined by ``config.seed``."""
    spec = config.spec
    score = ScoreModel(
        config.dim, config.score_hidden, config.time_embed_dim,
        sigma_spec=spec if config.score_scale_by_sigma else None,
        rng=_stream(config.seed, 1),
    )
    flow = FlowModel(
        config.dim, config.flow_blocks, config.flow_hidden, config.flow_scale_cap,
        rng=_stream(config.seed, 2),
    )
    dist = get_distribution(config.dataset, config.dim)
    state = TrainState(
        config=config, score=score, flow=flow,
        score_opt=AdamState.zeros_like(list(score.params.values())),
        flow_opt=AdamState.zeros_like(list(flow.params.values())),
        iteration=0, rng=_stream(config.seed, 0), dist=dist,
    )
    state.frozen_pool = make_frozen_pool(config, dist)
    return state


def make_frozen_pool(config: DinofConfig, dist: ToyDistribution) -> np.ndarray | None:
    """Fixed set of ``x(tm)`` draws, used instead of fresh noise when frozen."""
    if not config.freeze_flow_noise:
        return None
    rng = _stream(config.seed, 3)
    x0 = dist.sample(config.frozen_pool_size, rng)
    return sample_marginal(config.spec, x0, config.tm, rng)[0]


def _flow_batch(state: TrainState, x0: np.ndarray, rng) -> np.ndarray:
    cfg = state.config
    if state.frozen_pool is not None:
        idx = rng.integers(0, len(state.frozen_pool), size=len(x0))
        return state.frozen_pool[idx]
    return sample_marginal(cfg.spec, x0, cfg.tm, rng)[0]


def joint_train_step(state: TrainState, x0, rng: np.random.Generator | None = None) -> Losses:
    """One optimizer step on ``dsm_loss + rho * flow_nll(x(tm))``.

    Score and flow parameters are disjoint, so each set is updated with the
    gradient of its own term (the flow gradient scaled by ``rho``). With
    ``rho == 0`` the flow is left untouched and its loss reported as NaN.
    """
    cfg = state.config
    rng = state.rng if rng is None else rng
    x0 = np.asarray(x0, dtype=np.float64)
    t_max = cfg.spec.T if cfg.train_full_range else cfg.tm
    it = state.iteration

    keys = state.score_keys
    with Tape() as tape:
        params = {k: tape.watch(Tensor(state.score.params[k])) for k in keys}
        s_loss = dsm_loss(state.score, cfg.spec, x0, cfg.loss_weighting, rng, t_max, params)
        s_grads = tape.gradient(s_loss, [params[k] for k in keys])
    s_val = s_loss.item()
    if not np.isfinite(s_val):
        raise NonFiniteLossError("score_loss", it, s_val)

    f_val = float("nan")
    f_grads = None
    if cfg.rho > 0:
        xtm = _flow_batch(state, x0, rng)
        if not state.flow.initialized:
            state.flow.initialize(xtm)
        fkeys = state.flow_keys
        with Tape() as tape:
            fparams = {k: tape.watch(Tensor(state.flow.params[k])) for k in fkeys}
            f_loss = flow_nll(state.flow, xtm, fparams)
            f_grads = [cfg.rho * g for g in tape.gradient(f_loss, [fparams[k] for k in fkeys])]
        f_val = f_loss.item()
        if not np.isfinite(f_val):
            raise NonFiniteLossError("flow_nll", it, f_val)

    hyper = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    new, state.score_opt = ad.adam_step(
        [state.score.params[k] for k in keys], s_grads, state.score_opt, cfg.score_lr, **hyper
    )
    state.score.params = dict(zip(keys, new))
    if f_grads is not None:
        fkeys = state.flow_keys
        new, state.flow_opt = ad.adam_step(
            [state.flow.params[k] for k in fkeys], f_grads, state.flow_opt, cfg.flow_lr, **hyper
        )
        state.flow.params = dict(zip(fkeys, new))
    state.iteration += 1
    return Losses(s_val, f_val)


def train(state: TrainState, iterations: int | None = None, callback=None) -> list[Losses]:
    """Run ``iterations`` joint steps on fresh minibatches from the dataset.

    ``callback(state, losses, wall_ms)`` is invoked after every step.
    """
    cfg = state.config
    n = cfg.train_iterations - state.iteration if iterations is None else iterations
    history = []
    for _ in range(max(0, n)):
        t0 = time.perf_counter()
        x0 = state.dist.sample(cfg.batch_size, state.rng)
        losses = joint_train_step(state, x0)
        wall = (time.perf_counter() - t0) * 1e3
        history.append(losses)
        if callback is not None:
            callback(state, losses, wall)
    return history


def _sampler(cfg: DinofConfig, steps: int | None):
    return replace(cfg.sampler, steps=cfg.reverse_steps if steps is None else steps)


def sample_prior(state: TrainState, n: int, rng: np.random.Generator, z=None) -> np.ndarray:
    """Deterministic flow phase: ``x(tm) = flow^-1(z)`` with ``z ~ N(0, I)``."""
    if not state.flow.initialized:
        raise UsageError("flow has not seen data yet; train before sampling")
    z = rng.standard_normal((n, state.config.dim)) if z is None else np.asarray(z)
    return state.flow.inverse(z)


def dinof_sample(state: TrainState, n: int, rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
    """Hybrid sampler: flow prior at ``tm``, then the reverse SDE down to 0."""
    cfg = state.config
    x_tm = sample_prior(state, n, rng)
    if n == 0:
        return x_tm
    return pc_sample(cfg.spec, state.score, x_tm, cfg.tm, 0.0, _sampler(cfg, steps), rng)


def baseline_sample(state: TrainState, n: int, rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
    """Plain reverse SDE from the family's terminal prior over the full ``[0, T]``."""
    cfg = state.config
    spec = cfg.spec
    x = rng.standard_normal((n, cfg.dim)) * spec.prior_std()
    if n == 0:
        return x
    return pc_sample(spec, state.score, x, spec.T, 0.0, _sampler(cfg, spec.N if steps is None else steps), rng)


def truncated_sample(state: TrainState, n: int, rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
    """Ablation: start the reverse SDE at ``tm`` from ``N(0, sigma(tm)^2 I)``, no flow."""
    cfg = state.config
    x = rng.standard_normal((n, cfg.dim)) * float(cfg.spec.std(cfg.tm))
    if n == 0:
        return x
    return pc_sample(cfg.spec, state.score, x, cfg.tm, 0.0, _sampler(cfg, steps), rng)


@dataclass
class SweepRow:
    tm: float
    sampling_steps: int
    energy_distance: float
    mmd: float
    score_mse: float
    mode_coverage: float
    wall_ms_per_1k_samples: float

    COLUMNS = (
        "tm", "sampling_steps", "energy_distance", "mmd", "score_mse",
        "mode_coverage", "wall_ms_per_1k_samples",
    )


def evaluate_state(state: TrainState, n_eval: int, sample_seed: int | None = None):
    """Sample ``n_eval`` points and score them against fresh dataset draws."""
    from . import metrics

    cfg = state.config
    seed = cfg.seed if sample_seed is None else sample_seed
    t0 = time.perf_counter()
    samples = dinof_sample(state, n_eval, _stream(seed, 7))
    wall = (time.perf_counter() - t0) * 1e3
    ref = state.dist.sample(n_eval, _stream(seed, 99))
    ed = metrics.energy_distance(samples, ref)
    mmd = metrics.mmd_rbf(samples, ref)
    mse = cov = float("nan")
    if state.dist.has_mixture:
        t_grid = cfg.tm * np.array([0.2, 0.4, 0.6, 0.8, 1.0])
        mse = metrics.score_mse(state.score, state.dist, cfg.spec, t_grid, rng=_stream(seed, 11))
    if state.dist.kind.value == "gmm8":
        cov = metrics.mode_coverage(samples, state.dist)
    row = SweepRow(cfg.tm, cfg.reverse_steps, ed, mmd, mse, cov, wall * 1000.0 / max(n_eval, 1))
    return row, samples


def tm_sweep(base: DinofConfig, tm_list, n_eval: int = 2000, progress=None,
             states: list | None = None) -> list[SweepRow]:
    """Independent training and evaluation for every cut time in ``tm_list``.

    Trained states are appended to ``states`` when a list is passed.
    """
    rows = []
    for tm in tm_list:
        tm = float(tm)
        if not 0 < tm <= base.spec.T:
            raise UsageError(f"tm values must lie in (0, {base.spec.T}], got {tm}")
        state = init_state(base.with_tm(tm))
        train(state)
        row, _ = evaluate_state(state, n_eval)
        rows.append(row)
        if states is not None:
            states.append(state)
        if progress is not None:
            progress(row)
    return rows
