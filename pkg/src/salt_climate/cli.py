"""Command line entry point: ``salt-climate {run, verify, diag}``.

Every failure exits nonzero after printing a single machine-readable line
to stderr::

    error: {"kind": "ConfigError", "message": "...", "details": [...]}
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .runner import read_csv, recompute_diagnostics, run


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="salt-climate",
                                 description="Coupled atmosphere-ocean simulator with transport noise")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate a configured run and write diagnostics and snapshots")
    r.add_argument("--config", required=True, metavar="PATH", help="TOML run configuration")
    r.add_argument("--seed", type=int, help="override the Brownian seed (unsigned 64-bit)")
    r.add_argument("--output", metavar="DIR", help="override the output directory")
    r.add_argument("--mode", help="override the mode (deterministic, salt, lasalt, sam)")
    r.add_argument("--members", type=int, help="override the ensemble size")
    r.add_argument("--quiet", action="store_true", help="suppress per-row progress")

    v = sub.add_parser("verify", help="run the acceptance suite and print PASS/FAIL per criterion")
    v.add_argument("--quick", action="store_true", help="reduced ensembles and horizons")
    v.add_argument("criteria", nargs="*", type=int, help="criterion numbers (default: all)")

    d = sub.add_parser("diag", help="recompute diagnostics from snapshots and compare with the CSV")
    d.add_argument("--output", required=True, metavar="DIR", help="directory written by `run`")
    d.add_argument("--tolerance", type=float, default=1e-12, help="maximum allowed row difference")
    return ap


def _cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    cfg = load_config(path).with_overrides(seed=args.seed, output_dir=args.output, mode=args.mode,
                                           members=args.members)

    def progress(rec):
        print(f"t={rec.t:.6g} energy={rec.energy:.10g} circulation_a={rec.circulation_a:.10g}", flush=True)

    result = run(cfg, progress=None if args.quiet else progress)
    if result.blowup is not None:
        print(json.dumps({"blowup": result.blowup}), file=sys.stderr)
        return 3
    print(f"wrote {len(result.records)} rows to {Path(cfg.output_dir) / 'diagnostics.csv'}")
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import run_suite

    results = run_suite(args.criteria or None, quick=args.quick, stream=lambda line: print(line, flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def _cmd_diag(args) -> int:
    root = Path(args.output)
    if not (root / "diagnostics.csv").is_file():
        raise UsageError(f"no diagnostics.csv in {root}")
    stored = read_csv(root / "diagnostics.csv")
    again = np.array([r.row() for r in recompute_diagnostics(root)], dtype=float)
    if stored.shape != again.shape:
        print(f"row count differs: csv {stored.shape[0]}, snapshots {again.shape[0]}")
        return 1
    both_nan = np.isnan(stored) & np.isnan(again)
    diff = np.where(both_nan, 0.0, np.abs(stored - again))
    worst = float(np.nanmax(diff, initial=0.0)) if not np.isnan(diff).any() else float("inf")
    ok = worst <= args.tolerance
    print(f"{'MATCH' if ok else 'MISMATCH'} {stored.shape[0]} rows, max difference {worst:.3e}")
    return 0 if ok else 1


def main(argv=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    try:
        return {"run": _cmd_run, "verify": _cmd_verify, "diag": _cmd_diag}[args.command](args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        _error(exc)
        return 2
    except ConfigError as exc:
        _error(exc, exc.violations)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        _error(exc)
        return 1


def _error(exc: Exception, details=None) -> None:
    line = {"kind": type(exc).__name__, "message": str(exc)}
    if details:
        line["details"] = list(details)
    print("error: " + json.dumps(line), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
