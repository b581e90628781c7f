"""Command-line entry point.

Subcommands: simulate, predict, oracle, image, validate.
Exit status: 0 success, 1 validation failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from hocorr import analytic
from hocorr.cache import CacheError, CacheMismatchError, load_cache, save_cache
from hocorr.config import ConfigError, RunConfig, load_config
from hocorr.correlator import BUCKET, CorrelationEstimate, PlanError, normalized_g
from hocorr.ensemble import EnsembleJob, run_ensemble
from hocorr.geometry import check_balance_condition
from hocorr.experiments import GHOST_MODES, GHOST_TARGETS, ScenarioError, reconstruct
from hocorr.oracle import AlphabetTooSmallError, DiscreteAlphabet, InstanceTooLargeError, exact_correlation
from hocorr.outputs import write_csv, write_json

log = logging.getLogger("hocorr")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3

CHECKPOINT_CHUNKS = 64  # chunks between cache writes when --resume is given


def _out_dir(cfg: RunConfig, out: str | None) -> Path:
    path = Path(out or cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_config(cfg: RunConfig, resume: str | None = None) -> CorrelationEstimate:
    """Monte Carlo estimate for ``cfg``; with ``resume`` the run continues from and checkpoints to that cache."""
    job = EnsembleJob(cfg.layout, cfg.mode, cfg.plan, cfg.samples, cfg.seed, cfg.chunk_size, cfg.alphabet)
    acc = None
    if resume is not None and Path(resume).exists():
        acc = load_cache(resume, cfg).accumulator
        log.info("resuming at chunk %d of %d", acc.chunk_end, job.chunk_count)

    def checkpoint(a):
        if a.chunk_end % CHECKPOINT_CHUNKS == 0:
            save_cache(a, cfg, resume)

    acc = run_ensemble(job, workers=cfg.workers, accumulator=acc, on_chunk=checkpoint if resume else None)
    if resume is not None:
        save_cache(acc, cfg, resume)
    return normalized_g(acc)


def _value_column(order: int) -> str:
    return f"g{order}"


def write_estimate(est: CorrelationEstimate, out: Path) -> dict:
    """One CSV per target (coordinate, g, stderr) and a summary dict."""
    summary = {}
    for name, t in est.targets.items():
        col = _value_column(t.order)
        write_csv(out / f"{name}.csv", {t.coordinate_label: t.coordinates, col: t.g, "stderr": t.stderr})
        j = int(np.argmax(t.g))
        summary[name] = {
            "peak_value": t.g[j],
            "peak_position_m": t.coordinates[j],
            "peak_stderr": t.stderr[j],
            "max_abs_deviation": float(np.max(np.abs(t.g - 1.0))),
        }
    return summary


def command_simulate(cfg: RunConfig, out: str | None = None, resume: str | None = None) -> int:
    est = run_config(cfg, resume)
    path = _out_dir(cfg, out)
    summary = {
        "samples": est.sample_count,
        "seed": cfg.seed,
        "batches": est.batch_count,
        "targets": write_estimate(est, path),
    }
    write_json(path / "summary.json", summary)
    return EXIT_OK


def _target_positions(cfg: RunConfig, name: str) -> dict[int, np.ndarray] | None:
    r = cfg.plan[name]
    if BUCKET in r.channels:
        return None
    return {arm: cfg.plan.arm_positions[arm][idx] for arm, idx in zip(r.channels, r.indices)}


def predict_target(cfg: RunConfig, name: str) -> dict[str, np.ndarray] | None:
    """Analytic curves for one planned target, or None when no closed form applies."""
    pos = _target_positions(cfg, name)
    if pos is None:
        return None
    lay, mode = cfg.layout, cfg.mode
    arms = sorted(pos)
    order = len(arms)
    col = _value_column(order)
    structure = analytic.classify_structure(mode, lay.arm_count)
    if tuple(arms) not in structure.correlated_subsets:
        return {col: np.ones_like(pos[arms[0]])}
    if mode.kind == "ghz" and order == lay.arm_count:
        xs = [pos[a] for a in range(1, lay.arm_count + 1)]
        c = mode.constrained_arm
        curves = {}
        if check_balance_condition(lay).satisfied and c == 1:
            curves[col] = analytic.predicted_g3_ghz(xs, lay)
        curves[f"{col}_interference"] = analytic.quadrature_g3_ghz(xs, lay, c)
        curves[f"{col}_ensemble"] = analytic.ensemble_g_ghz(xs, lay, c)
        return curves
    if mode.kind == "identical" and order == 2:
        i, j = arms
        d = lay.distances
        return {
            col: analytic.predicted_g2_w(pos[i], pos[j], d[i - 1], d[j - 1], lay),
            f"{col}_discrete": analytic.predicted_g2_w(pos[i], pos[j], d[i - 1], d[j - 1], lay, discrete=True),
        }
    if mode.kind == "identical" and order == 3:
        xs = [pos[a] for a in arms]
        return {
            col: analytic.predicted_g3_w(xs, lay, arms=arms),
            f"{col}_discrete": analytic.predicted_g3_w(xs, lay, discrete=True, arms=arms),
        }
    return None


def command_predict(cfg: RunConfig, out: str | None = None) -> int:
    path = _out_dir(cfg, out)
    written, skipped = [], []
    for r in cfg.plan.resolved:
        curves = predict_target(cfg, r.name)
        if curves is None:
            skipped.append(r.name)
            continue
        curves = {k: np.broadcast_to(v, r.coordinates.shape) for k, v in curves.items()}
        write_csv(path / f"{r.name}_predicted.csv", {r.coordinate_label: r.coordinates, **curves})
        written.append(r.name)
    write_json(path / "predict_summary.json", {"written": written, "no_closed_form": skipped})
    return EXIT_OK


def command_oracle(cfg: RunConfig, out: str | None = None) -> int:
    if cfg.alphabet is None:
        raise ConfigError("alphabet", "the oracle needs a discrete alphabet size")
    result = exact_correlation(cfg.mode, cfg.layout, DiscreteAlphabet(cfg.alphabet), cfg.plan)
    path = _out_dir(cfg, out)
    summary = {"enumeration_count": result.enumeration_count, "targets": write_estimate(result.estimate, path)}
    write_json(path / "summary.json", summary)
    return EXIT_OK


def command_image(cfg: RunConfig, out: str | None = None, resume: str | None = None) -> int:
    obj = cfg.object
    if obj is None:
        raise ConfigError("object", "image needs an object definition (use 'object: default' for the built-in one)")
    names = {t.name for t in cfg.targets}
    missing = [t.name for t in GHOST_TARGETS.values() if t.name not in names]
    if missing:
        raise ConfigError("plan", f"image needs the ghost-imaging targets {missing}")
    est = run_config(cfg, resume)
    path = _out_dir(cfg, out)
    results = {m: reconstruct(est, obj, m, cfg.layout) for m in GHOST_MODES[:2]}
    results["SecondOrderControl"] = reconstruct(
        est, obj, "SecondOrderControl", cfg.layout, absolute_threshold=results["FixedX2ScanX3"].threshold
    )
    summary = {"samples": est.sample_count, "seed": cfg.seed, "modes": {}}
    for mode, r in results.items():
        write_csv(path / f"ghost_{mode}.csv", {"x_m": r.scan_positions, "profile": r.profile, "stderr": r.stderr})
        summary["modes"][mode] = {
            "contrast": r.contrast,
            "magnification": r.magnification,
            "peak_positions_m": r.peak_positions,
            "peak_heights": [p.height for p in r.peaks],
            "threshold": r.threshold,
        }
    write_json(path / "summary.json", summary)
    return EXIT_OK


def command_validate(workers: int = 1, out: str | None = None) -> int:
    from hocorr.validation import run_acceptance

    results = run_acceptance(workers=workers, stream=sys.stdout)
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        write_json(path / "validation.json", [r.as_dict() for r in results])
    return EXIT_OK if all(r.passed for r in results if r.primary) else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hocorr", description="Higher-order intensity correlation simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs_config in (("simulate", True), ("predict", True), ("oracle", True), ("image", True), ("validate", False)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=needs_config, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (default: the config's output key)")
        sp.add_argument("--workers", type=int, help="worker processes (overrides the config)")
        sp.add_argument("--seed", type=int, help="override the config's seed")
        if name in ("simulate", "image"):
            sp.add_argument("--resume", metavar="PATH", help="cache file to resume from and checkpoint to")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "validate":
            return command_validate(workers=args.workers or 1, out=args.out)
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("workers", args.workers)) if v is not None}
        if overrides:
            cfg = cfg.with_overrides(**overrides)
        if args.command == "simulate":
            return command_simulate(cfg, args.out, args.resume)
        if args.command == "predict":
            return command_predict(cfg, args.out)
        if args.command == "oracle":
            return command_oracle(cfg, args.out)
        return command_image(cfg, args.out, args.resume)
    except (ConfigError, PlanError, ScenarioError, InstanceTooLargeError, AlphabetTooSmallError, CacheMismatchError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CacheError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
