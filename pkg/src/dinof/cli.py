"""Command-line front-end: ``dinof train | sample | eval | sweep-tm``.

Exit codes: 0 success, 2 configuration error, 3 checkpoint error, 4 data error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, metrics, pipeline, plotting
from . import config as cfgmod
from .data import get_distribution
from .errors import CheckpointError, ConfigError, DataError, UsageError

log = logging.getLogger("dinof")

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DATA = 4

LOSS_COLUMNS = ("iter", "score_loss", "flow_nll", "wall_ms")
EVAL_COLUMNS = ("metric", "value", "n_a", "n_b", "seed")


def _fmt(x) -> str:
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def _write_config(outdir: Path, flat) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.resolved.txt").write_text(cfgmod.dump(flat), encoding="utf-8")


def _frontend(flat):
    return {k: flat[k] for k in cfgmod.FRONTEND_KEYS}


def write_samples(path, samples: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = samples.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)])
        for row in samples:
            w.writerow([f"{v:.17g}" for v in row])
    return path


def read_samples(path) -> np.ndarray:
    """Parse a sample CSV (header line, then one numeric row per sample)."""
    try:
        fh = Path(path).open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row", line=1)
        d = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d:
                raise DataError(f"{path}: expected {d} columns, got {len(row)}", line=lineno)
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{path}: non-numeric value in {row}", line=lineno) from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: non-finite value in {row}", line=lineno)
            rows.append(vals)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), d)


def cmd_train(args) -> int:
    flat = cfgmod.load(args.config, args.set)
    cfg = cfgmod.build(flat)
    outdir = Path(flat["output_dir"])
    _write_config(outdir, flat)
    state = pipeline.init_state(cfg)
    front = _frontend(flat)
    checkpoint.save(outdir / "checkpoint.dinof", state, front)
    if cfg.train_iterations == 0:
        log.info("train_iterations = 0; wrote initial checkpoint only")
        return 0
    interval = max(1, flat["checkpoint_interval"])
    rows = []

    def on_step(st, losses, wall_ms):
        rows.append((st.iteration, losses.score_loss, losses.flow_nll, wall_ms))
        if st.iteration % interval == 0 or st.iteration == cfg.train_iterations:
            checkpoint.save(outdir / "checkpoint.dinof", st, front)
            log.info("iter %d  score_loss %.5f  flow_nll %.5f", *rows[-1][:3])

    pipeline.train(state, callback=on_step)
    with (outdir / "losses.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for it, s, f, ms in rows:
            w.writerow([it, _fmt(s), _fmt(f), f"{ms:.3f}"])
    if flat["plot"]:
        it = np.array([r[0] for r in rows])
        plotting.loss_curves(it, [r[1] for r in rows], [r[2] for r in rows], outdir / "losses.svg")
    return 0


def cmd_sample(args) -> int:
    state, flat = checkpoint.load(args.checkpoint)
    seed = flat["seed"] if args.seed is None else args.seed
    rng = np.random.default_rng([seed, 7])
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    if args.baseline:
        samples = pipeline.baseline_sample(state, args.n, rng, args.steps)
    else:
        samples = pipeline.dinof_sample(state, args.n, rng, args.steps)
    out = write_samples(args.out, samples)
    log.info("wrote %d samples to %s", args.n, out)
    if args.n == 0 or not flat["plot"]:
        return 0
    if samples.shape[1] != 2:
        print(f"notice: data is {samples.shape[1]}-dimensional; SVG scatter skipped", file=sys.stderr)
        return 0
    title = "baseline reverse SDE" if args.baseline else f"flow prior, $T_m$ = {state.config.tm:g}"
    plotting.scatter(samples, out.with_suffix(".svg"), flat["plot_range"], title)
    return 0


def cmd_eval(args) -> int:
    a = read_samples(args.samples_a)
    seed = args.seed
    dist = None
    if Path(args.reference).exists():
        b = read_samples(args.reference)
        try:
            dist = get_distribution(args.dist_hint) if args.dist_hint else None
        except UsageError as exc:
            raise ConfigError(str(exc)) from None
    else:
        try:
            dist = get_distribution(args.reference, a.shape[1] if a.size else 2)
        except UsageError as exc:
            raise DataError(f"{args.reference}: neither a readable file nor a dataset name ({exc})") from None
        n_ref = len(a) if args.n_ref is None else args.n_ref
        b = dist.sample(n_ref, np.random.default_rng([seed, 99]))
        print(f"reference: {n_ref} draws from {dist.kind.value} with seed {seed}", file=sys.stderr)
    if a.shape[1:] != b.shape[1:]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]} columns")
    report = metrics.evaluate(a, b, dist)
    rows = list(report.rows())
    if args.checkpoint:
        state, _ = checkpoint.load(args.checkpoint)
        if state.dist.has_mixture:
            cfg = state.config
            t_grid = cfg.tm * np.array([0.2, 0.4, 0.6, 0.8, 1.0])
            mse = metrics.score_mse(state.score, state.dist, cfg.spec, t_grid,
                                    rng=np.random.default_rng([seed, 11]))
            rows.append(("score_mse", mse))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for name, value in rows:
            w.writerow([name, _fmt(float(value)), len(a), len(b), seed])
    return 0


def parse_tm_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--tm-list must be comma-separated numbers, got '{text}'", key="tm") from None
    if not vals:
        raise ConfigError("--tm-list is empty", key="tm")
    return vals


def cmd_sweep_tm(args) -> int:
    overrides = list(args.set or [])
    tms = parse_tm_list(args.tm_list)
    flat = cfgmod.load(args.config, overrides)
    base = cfgmod.build(flat)
    for tm in tms:
        if not 0 < tm <= base.spec.T:
            raise ConfigError(f"tm values must lie in (0, {base.spec.T}], got {tm}", key="tm")
    outdir = Path(flat["output_dir"])
    _write_config(outdir, flat)

    def progress(row):
        log.info("tm %.3g  steps %d  energy %.5f", row.tm, row.sampling_steps, row.energy_distance)

    rows = pipeline.tm_sweep(base, tms, flat["eval_samples"], progress)
    with (outdir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(pipeline.SweepRow.COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.tm), r.sampling_steps, _fmt(r.energy_distance), _fmt(r.mmd),
                        _fmt(r.score_mse), _fmt(r.mode_coverage), f"{r.wall_ms_per_1k_samples:.3f}"])
    by_steps = sorted(rows, key=lambda r: r.sampling_steps)
    walls = [r.wall_ms_per_1k_samples for r in by_steps]
    if any(b <= a for a, b in zip(walls, walls[1:])):
        log.warning("wall-clock per sample is not strictly increasing with sampling steps")
    if flat["plot"]:
        plotting.sweep(rows, outdir / "sweep.svg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dinof", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="joint score/flow training")
    t.add_argument("config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.add_argument("--baseline", action="store_true", help="plain reverse SDE from the terminal prior")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--steps", type=int, default=None, help="override reverse steps")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compare two sample sets")
    e.add_argument("samples_a")
    e.add_argument("reference", help="second sample CSV or a dataset name such as gmm8")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--n-ref", type=int, default=None)
    e.add_argument("--dist-hint", default=None, help="dataset name enabling mode coverage for file references")
    e.add_argument("--checkpoint", default=None, help="also report score MSE of this model")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep-tm", help="train and evaluate across cut times")
    w.add_argument("config")
    w.add_argument("--tm-list", required=True)
    w.add_argument("--set", action="append", metavar="KEY=VALUE")
    w.set_defaults(func=cmd_sweep_tm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
