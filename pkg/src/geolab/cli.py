"""Command line: ``geolab <find|iterate|minimax|bangert|verify> --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance self-check failure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from pathlib import Path

import click
import numpy as np

from .config import load_config
from .errors import ConfigError, GeolabError

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

# flags that mark a run as numerically failed
FAILURE_FLAGS = {"ODE_DIVERGENCE", "NO_CONVERGENCE", "NEWTON_STALL"}

CSV_COLUMNS = {
    "records": ["class", "energy", "index", "nullity", "grad_norm", "basins", "speed_defect", "mu", "epsilon"],
    "scan": ["class", "energy", "m", "q_prime", "index", "nullity", "verdict"],
    "trace": ["round", "max_energy"],
    "decay": ["m", "gap", "m_gap", "base_defect", "boundary_defect"],
    "acceptance": ["criterion", "name", "status", "value", "threshold", "runtime_s"],
}


def _plain(obj):
    """Convert numpy scalars and arrays into JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def non_finite_fields(obj, path=""):
    """Paths of every NaN or infinite number inside ``obj``."""
    if isinstance(obj, dict):
        return [p for k, v in obj.items() for p in non_finite_fields(v, f"{path}.{k}" if path else str(k))]
    if isinstance(obj, list):
        return [p for i, v in enumerate(obj) for p in non_finite_fields(v, f"{path}[{i}]")]
    if isinstance(obj, float) and not math.isfinite(obj):
        return [path]
    return []


def write_outputs(out_dir, command, report, tables, digest, seed):
    """One JSON report plus one CSV per table; every file carries the config hash and the seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"config_hash": digest, "seed": seed, **report}
    with open(out / f"{command}.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths = [out / f"{command}.json"]
    for name, rows in tables.items():
        cols = CSV_COLUMNS[name] + ["config_hash", "seed"]
        with open(out / f"{name}.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({**row, "config_hash": digest, "seed": seed})
        paths.append(out / f"{name}.csv")
    return paths


def _flags(report):
    flags = set()
    if report.get("flag"):
        flags.add(report["flag"])
    flags.update(report.get("stats", {}).get("flags", []))
    return flags


def _run(command, config_path, seed, out):
    from .runs import COMMANDS

    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        report, tables = COMMANDS[command](cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except GeolabError as exc:
        click.echo(f"numerical failure [{exc.code}]: {exc}", err=True)
        return EXIT_NUMERIC
    report = _plain(report)
    tables = _plain(tables)
    out_dir = out or cfg.section("")["output"]
    bad = non_finite_fields({"report": report, "tables": tables})
    failed = _flags(report) & FAILURE_FLAGS
    if bad:
        report["non_finite"] = bad
    paths = write_outputs(out_dir, command, report, tables, cfg.digest, cfg.seed)
    for p in paths:
        click.echo(f"wrote {p}")
    if bad:
        click.echo(f"numerical failure: non-finite values at {', '.join(bad[:5])}", err=True)
        return EXIT_NUMERIC
    if failed:
        click.echo(f"numerical failure: flags {sorted(failed)}", err=True)
        return EXIT_NUMERIC
    return EXIT_OK


def _common(fn):
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (overrides the config).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Random seed (overrides the config).")(fn)
    fn = click.option("--config", "config_path", type=click.Path(), required=True, help="TOML run configuration.")(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """Isometry-invariant geodesics on catalog manifolds."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _command(name, doc):
    @_common
    def cmd(config_path, seed, out):
        sys.exit(_run(name, config_path, seed, out))

    cmd.__doc__ = doc
    main.command(name)(cmd)


_command("find", "Multistart search for invariant geodesics; writes find.json and records.csv.")
_command("iterate", "Index scans of the iterates of every found geodesic; writes iterate.json and scan.csv.")
_command("minimax", "Minimax over a one-parameter family; writes minimax.json and trace.csv.")
_command("bangert", "Bangert gap decay for a family; writes bangert.json and decay.csv.")


@main.command("verify")
@_common
@click.option("--only", multiple=True, type=click.IntRange(1, 10), help="Run only these criteria (repeatable).")
def verify(config_path, seed, out, only):
    """Run the acceptance suite and print PASS/FAIL per criterion; writes acceptance.csv."""
    from .acceptance import run_acceptance

    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    results = run_acceptance(list(only) or None, seed=cfg.seed, echo=click.echo)
    rows = [r.to_row() for r in results]
    report = {"command": "verify", "passed": all(r.passed for r in results),
              "criteria": [{**r.to_row(), "detail": r.detail} for r in results]}
    write_outputs(out or cfg.section("")["output"], "verify", _plain(report), {"acceptance": rows},
                  cfg.digest, cfg.seed)
    sys.exit(EXIT_OK if report["passed"] else EXIT_VERIFY)


if __name__ == "__main__":
    main()
