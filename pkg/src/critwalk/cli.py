"""Command-line entry point: ``critwalk <experiment> [--config FILE] [flags]``.

Flags override values from the config file (or from a ``manifest.json`` of a
previous run, which holds the effective config). Outputs go to
``--output-dir``: ``manifest.json``, ``<experiment>.csv`` and
``<experiment>.json``. Exit codes: 0 all verdicts pass, 1 some verdict
fails, 2 usage or configuration error, 3 a runtime cap was exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _backend, experiments, rng
from .config import ConfigError, ExperimentConfig, from_dict, load_raw
from .walker import InsufficientRegenerations

EXPERIMENTS = ("analytic", "speed", "covariance", "regen-stats", "scaling",
               "electrical-validate", "duality-validate")
NEEDS_P = {"analytic", "speed", "covariance", "duality-validate"}
MANIFEST_VERSION = 1
CSV_SCHEMA_VERSION = 1

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _count(text: str) -> int:
    """Integers that may be written as ``1e6``."""
    x = float(text)
    if x != int(x):
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    return int(x)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [_count(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="critwalk", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"critwalk {__version__}")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file or manifest.json of an earlier run")
        sp.add_argument("--base", help="named law (binary, mix13, ...) or comma-separated probabilities")
        sp.add_argument("--p", type=float)
        sp.add_argument("--p-grid", type=_floats)
        sp.add_argument("--schedule", type=_ints)
        sp.add_argument("--L", type=float)
        sp.add_argument("--family")
        sp.add_argument("--d", type=int)
        sp.add_argument("--horizon", type=_count)
        sp.add_argument("--replicas", type=_count)
        sp.add_argument("--seed", type=int, dest="master_seed")
        sp.add_argument("--tail-buffer", type=float)
        sp.add_argument("--stride", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--trap-cap", type=_count)
        sp.add_argument("--snap-ts", type=_floats)
        sp.add_argument("--samples", type=_count)
        sp.add_argument("--depth-cap", type=int)
        sp.add_argument("--output-dir")
        sp.add_argument("--quiet", action="store_true", help="no progress heartbeat on stderr")
    return ap


FLAG_FIELDS = ("p", "p_grid", "schedule", "L", "horizon", "replicas", "master_seed", "tail_buffer",
               "stride", "threads", "trap_cap", "snap_ts", "samples", "depth_cap", "output_dir")


def effective_config(args: argparse.Namespace, env=os.environ) -> ExperimentConfig:
    """Merge config file, environment and flags (later wins) and validate."""
    raw = load_raw(args.config) if args.config else {}
    if "config" in raw and "manifest_version" in raw:
        raw = dict(raw["config"])
    if raw.get("experiment", args.experiment) != args.experiment:
        raise ConfigError(f"$.experiment: file is for {raw['experiment']!r}, not {args.experiment!r}")
    raw["experiment"] = args.experiment
    if "CRITWALK_SEED" in env:
        raw["master_seed"] = int(env["CRITWALK_SEED"])
    if "CRITWALK_THREADS" in env:
        raw["threads"] = int(env["CRITWALK_THREADS"])
    raw.setdefault("threads", os.cpu_count() or 1)
    for f in FLAG_FIELDS:
        v = getattr(args, f, None)
        if v is not None:
            raw[f] = v
    if args.base is not None:
        raw["base"] = args.base if args.base[0].isalpha() else _floats(args.base)
    if args.family is not None or args.d is not None:
        law = dict(raw.get("step_law") or {})
        if args.family is not None:
            law["family"] = args.family
        if args.d is not None:
            law["d"] = args.d
        raw["step_law"] = law
    cfg = from_dict(raw)
    if args.experiment in NEEDS_P and cfg.p is None:
        raise UsageError(f"{args.experiment} needs --p (or \"p\" in the config)")
    return cfg


def dispatch(cfg: ExperimentConfig, progress: bool) -> experiments.ExperimentResult:
    name = cfg.experiment
    if name == "analytic":
        return experiments.analytic_report(cfg)
    if name == "speed":
        return experiments.estimate_speed(cfg, progress=progress)
    if name == "covariance":
        return experiments.estimate_covariance(cfg, progress=progress)
    if name == "regen-stats":
        return experiments.regeneration_check(cfg, progress=progress)
    if name == "scaling":
        return experiments.scaling_limit_check(cfg, progress=progress)
    if name == "electrical-validate":
        return experiments.electrical_check(n_trees=cfg.replicas, seed=cfg.master_seed)
    if name == "duality-validate":
        return experiments.duality_check(cfg, progress=progress)
    raise UsageError(f"unknown experiment {name!r}")


def manifest(cfg: ExperimentConfig, started: float, finished: float, status: str) -> dict:
    n = cfg.replicas if cfg.experiment not in ("analytic", "electrical-validate") else 0
    return {
        "manifest_version": MANIFEST_VERSION,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "artifact_version": __version__,
        "backend": _backend.NAME,
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "replica_keys": [{s: rng.derive_key(cfg.master_seed, r, getattr(rng, s.upper()))
                          for s in ("tree", "walk", "embed")} for r in range(n)],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_seconds": round(finished - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "status": status,
    }


def summary_table(res: experiments.ExperimentResult) -> str:
    lines = [f"{res.name}: {'PASS' if res.passed else 'FAIL'}"]
    if res.name == "analytic":
        e = res.estimates
        lines.append(f"  q={e['q']:.6f} v={e['v']:.6f} κ={e['kappa']:.6f}")
    for k, v in res.estimates.items():
        if isinstance(v, (int, float, np.floating, np.integer)):
            se = res.std_errors.get(k)
            tail = f" ± {se:.3g}" if isinstance(se, float) else ""
            lines.append(f"  {k:<24} {_num(v)}{tail}")
    for k, v in res.reference.items():
        if isinstance(v, (int, float, np.floating)):
            lines.append(f"  ref {k:<20} {_num(v)}")
    for k, ok in res.verdicts.items():
        lines.append(f"  [{'ok' if ok else 'FAIL'}] {k}")
    for note in res.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)


def _num(v) -> str:
    return f"{v:.6f}" if isinstance(v, (float, np.floating)) and 1e-3 <= abs(v) < 1e6 else f"{v:.6g}"


def write_outputs(out_dir: Path, cfg: ExperimentConfig, res, started: float, status: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg.experiment
    if res is not None:
        (out_dir / f"{stem}.csv").write_text(res.to_csv())
        (out_dir / f"{stem}.json").write_text(res.to_json())
    (out_dir / "manifest.json").write_text(json.dumps(manifest(cfg, started, time.time(), status), indent=2))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = effective_config(args)
    except (ConfigError, UsageError, ValueError, OSError) as exc:
        print(f"critwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    print(json.dumps({"effective_config": cfg.to_dict()}), file=sys.stderr)
    started = time.time()
    try:
        res = dispatch(cfg, progress=not args.quiet)
    except _backend.TrapOverflow as exc:
        print(f"critwalk: runtime cap exceeded: {exc}", file=sys.stderr)
        if out_dir:
            write_outputs(out_dir, cfg, None, started, "cap_exceeded")
        return EXIT_CAP
    except InsufficientRegenerations as exc:
        print(f"critwalk: {exc}; increase --horizon", file=sys.stderr)
        if out_dir:
            write_outputs(out_dir, cfg, None, started, "insufficient_regenerations")
        return EXIT_FAIL
    if out_dir:
        write_outputs(out_dir, cfg, res, started, "pass" if res.passed else "fail")
    else:
        sys.stdout.write(res.to_csv())
    print(summary_table(res))
    return EXIT_OK if res.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
