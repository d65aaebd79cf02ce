"""Command-line entry point.

Exit codes: 0 success, 2 configuration or validation error, 3 every point of
the sweep diverged.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, preset_from_dict, preset_to_dict
from .errors import ConfigurationError, ContractError
from .experiments import PRESETS, SweepResult, get_preset, run_scenario, theory_overlay

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_DIVERGED = 3

log = logging.getLogger("fdsic")


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".10g")


def csv_text(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    seed_cols = [f"residual_dbm_seed_{s}" for s in result.seeds]
    w.writerow(["curve", "sweep_value_ns", "residual_dbm_mean", *seed_cols,
                "theory_dbm", "realized_delay_ns", "converged"])
    for r in result.rows:
        w.writerow([
            r.curve,
            _fmt(r.sweep_value_ns),
            _fmt(r.residual_dbm_mean),
            *(_fmt(v) for v in r.residual_dbm_seeds),
            _fmt(r.theory_dbm),
            _fmt(r.realized_delay_ns),
            "1" if all(r.converged) else "0",
        ])
    return buf.getvalue()


def manifest_dict(preset, result: SweepResult, duration_s: float) -> dict:
    return {
        "toolkit_version": __version__,
        "preset": preset.name,
        "config": preset_to_dict(preset),
        "seeds": list(preset.seeds),
        "duration_s": duration_s,
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
        "rows": [
            {
                "curve": r.curve,
                "sweep_value_ns": r.sweep_value_ns,
                "converged": list(r.converged),
                "diverged": r.diverged,
                "residual_dbm_seeds": list(r.residual_dbm_seeds),
            }
            for r in result.rows
        ],
    }


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_manifest(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"manifest {path} is not valid JSON: {exc}") from None


def _parse_seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigurationError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigurationError("--seeds needs at least one seed")
    return seeds


def _resolve(args):
    """Preset selected by --preset / --config / --manifest, with CLI overrides."""
    manifest = None
    if getattr(args, "manifest", None):
        manifest = load_manifest(args.manifest)
        if "config" not in manifest:
            raise ConfigurationError(f"manifest {args.manifest} has no 'config' entry")
        preset = preset_from_dict(manifest["config"])
    elif args.config:
        preset = load_config(args.config)
    else:
        preset = get_preset(args.preset)

    changes = {}
    if args.seeds is not None:
        changes["seeds"] = _parse_seeds(args.seeds)
    if args.symbols is not None:
        changes["signal"] = dataclasses.replace(preset.signal, num_symbols=args.symbols)
    if args.mu is not None:
        changes["step_size"] = args.mu
    if changes:
        if manifest is not None:
            raise ConfigurationError("--seeds/--symbols/--mu cannot be combined with --manifest")
        preset = preset.replace(**changes)
    return preset.validate(), manifest


def _stored_matches(manifest: dict, result: SweepResult) -> bool:
    stored = manifest.get("rows", [])
    if len(stored) != len(result.rows):
        return False
    for s, r in zip(stored, result.rows):
        a = np.array(s["residual_dbm_seeds"], dtype=float)
        b = np.array(r.residual_dbm_seeds, dtype=float)
        if s["curve"] != r.curve or not np.array_equal(a, b, equal_nan=True):
            return False
    return True


def cmd_run(args) -> int:
    preset, manifest = _resolve(args)
    log.info("running %s: %d curves x %d points x %d seeds",
             preset.name, len(preset.curves), len(preset.sweep_values), len(preset.seeds))
    t0 = time.perf_counter()
    result = run_scenario(preset, jobs=args.jobs)
    duration = time.perf_counter() - t0

    out = Path(args.out)
    csv_path = out / f"{preset.name}.csv"
    write_atomic(csv_path, csv_text(result))
    write_atomic(out / f"{preset.name}.manifest.json",
                 json.dumps(manifest_dict(preset, result, duration), indent=2, allow_nan=True) + "\n")
    print(f"wrote {csv_path} ({len(result.rows)} rows, {duration:.1f} s)")

    if manifest is not None:
        same = _stored_matches(manifest, result)
        print("reproduced stored results bit-identically" if same else "results differ from the manifest")
        if args.verify and not same:
            return 1
    if all(r.diverged for r in result.rows):
        print("error: the canceller diverged at every point of the sweep", file=sys.stderr)
        return EXIT_ALL_DIVERGED
    return EXIT_OK


def cmd_theory(args) -> int:
    preset, _ = _resolve(args)
    rows = theory_overlay(preset)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["curve", "sweep_value_ns", "realized_delay_ns", "theory_dbm"])
    for label, v, realized, th in rows:
        w.writerow([label, _fmt(v), _fmt(realized), _fmt(th)])
    return EXIT_OK


def cmd_list(args) -> int:
    for name, factory in PRESETS.items():
        print(f"{name}\t{factory().description}")
    return EXIT_OK


def _source_args(p: argparse.ArgumentParser, manifest: bool):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
    g.add_argument("--config", metavar="FILE", help="scenario file (INI)")
    if manifest:
        g.add_argument("--manifest", metavar="FILE", help="re-run the scenario recorded in a manifest")
    p.add_argument("--seeds", metavar="INTS", help="comma-separated seeds, e.g. 1,2,3,4")
    p.add_argument("--symbols", type=int, metavar="N", help="OFDM symbols per frame")
    p.add_argument("--mu", type=float, metavar="MU", help="NLMS step size, 0 < mu < 2")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fdsic", description="Full-duplex self-interference cancellation sweeps.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep and write <name>.csv and <name>.manifest.json")
    _source_args(run, manifest=True)
    run.add_argument("--out", default="results", metavar="DIR", help="output directory (default: results)")
    run.add_argument("--jobs", type=int, default=os.cpu_count() or 1, metavar="N",
                     help="worker processes (default: available cores)")
    run.add_argument("--verify", action="store_true",
                     help="with --manifest: exit 1 unless the stored results are reproduced exactly")
    run.set_defaults(func=cmd_run)

    th = sub.add_parser("theory", help="print the closed-form residual table (single-path scenarios)")
    _source_args(th, manifest=False)
    th.set_defaults(func=cmd_theory)

    ls = sub.add_parser("list-presets", help="list built-in scenarios")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
