"""Command-line entry point: ``ucs solve | se | sweep``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np
from scipy.linalg import LinAlgError
from threadpoolctl import threadpool_limits

from .config import dump_config, load_config, spec_from_config
from .engine import solve
from .errors import ConfigError, InputError, NumericalError
from .harness import (
    TrialRecord,
    child_seed,
    hamming_distortion,
    make_trial_instance,
    nrmse,
    run_experiment,
)
from .model import GroundTruth, ProblemInstance, SignalPrior, validate_instance
from .state_evolution import SEParams, se_run

log = logging.getLogger("ucs")

SCHEMA_VERSION = 1
COLUMNS = ("schema_version", "kind", "N", "M", "R", "p", "rho", "snr_db", "seed",
           "trial", "nrmse_x", "hd_u", "iterations", "converged", "se_nrmse", "wall_ms")
TRACE_COLUMNS = ("t", "nrmse_x", "delta_x", "delta_u", "beta", "gamma_x")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class RecordWriter:
    """Streams records as CSV or JSON lines, flushing after every row."""

    def __init__(self, stream, fmt="csv", columns=COLUMNS):
        self.stream = stream
        self.fmt = fmt
        self.columns = columns
        if fmt == "csv":
            self._line(",".join(columns))

    def _line(self, text):
        self.stream.write(text + "\n")
        self.stream.flush()

    def write(self, row: dict):
        if self.fmt == "csv":
            self._line(",".join(_fmt(row.get(c)) for c in self.columns))
        else:
            obj = {c: row.get(c) for c in self.columns}
            for k, v in obj.items():
                if isinstance(v, float) and not math.isfinite(v):
                    obj[k] = _fmt(v)
            self._line(json.dumps(obj, sort_keys=False))


def record_row(rec: TrialRecord):
    row = asdict(rec)
    row["schema_version"] = SCHEMA_VERSION
    return row


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline="\n"), True
    except OSError as exc:
        raise ConfigError(f"cannot open output {path!r}: {exc}") from exc


def resolve_threads(value):
    if value is None:
        env = os.environ.get("UCS_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"UCS_THREADS={env!r} is not an integer") from exc
    if value < 0:
        raise ConfigError("thread count must be >= 0")
    return value or (os.cpu_count() or 1)


def _load_instance(path):
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read instance {path!r}: {exc}") from exc
    missing = [k for k in ("Y", "A", "gamma") if k not in data]
    if missing:
        raise ConfigError(f"instance file lacks arrays {missing}")
    inst = ProblemInstance.from_physical(data["Y"], data["A"], float(data["gamma"]))
    validate_instance(inst)
    gt = None
    if "perm" in data and "X" in data:
        gt = GroundTruth(np.asarray(data["perm"], dtype=int), data["X"],
                         np.asarray(data["A"])[np.asarray(data["perm"], dtype=int)] @ data["X"])
    return inst, gt


def cmd_solve(cfg, args):
    spec = spec_from_config(cfg)
    t0 = time.perf_counter()
    if cfg["instance"]:
        inst, gt = _load_instance(cfg["instance"])
        prior = SignalPrior(spec.rho[0], spec.sigma_x2)
        seed, cell = spec.master_seed, None
    else:
        cells = spec.cells()
        if len(cells) != 1:
            raise ConfigError(f"solve needs exactly one grid cell, config has {len(cells)}")
        cell = cells[0]
        seed = child_seed(spec.master_seed, 0, 0)
        inst, gt, prior = make_trial_instance(cell, seed, spec)
    with threadpool_limits(limits=1):
        sol = solve(inst, prior, spec.solver, ground_truth=gt)
    rec = TrialRecord(spec.kind, inst.N, inst.M, inst.R,
                      cell.p if cell else None, prior.rho,
                      cell.snr_db if cell else None, seed, 0,
                      iterations=sol.iterations, converged=sol.converged)
    if gt is not None:
        rec.nrmse_x = nrmse(gt.X, sol.X_hat)
        rec.hd_u = hamming_distortion(gt.perm, sol.U_hard)
    rec.wall_ms = (time.perf_counter() - t0) * 1e3
    out, close = _open_out(args.out)
    try:
        RecordWriter(out, args.format).write(record_row(rec))
    finally:
        if close:
            out.close()
    trace_path = args.trace
    if trace_path is None and args.out not in (None, "-"):
        trace_path = args.out + ".trace." + args.format
    if trace_path:
        tr, close = _open_out(trace_path)
        try:
            w = RecordWriter(tr, args.format, TRACE_COLUMNS)
            for row in sol.trace:
                w.write(row)
        finally:
            if close:
                tr.close()
    log.info("solve: %d iterations, converged=%s", sol.iterations, sol.converged)
    return 0


def _se_row(spec, ci, cell):
    t0 = time.perf_counter()
    params = SEParams.from_dims(cell.N, cell.M, cell.R, cell.snr_db,
                                SignalPrior(cell.rho, spec.sigma_x2), spec.sensing_scale)
    states = se_run(params, t_max=spec.se_t_max, xi=spec.solver.xi)
    rec = TrialRecord(spec.kind, cell.N, cell.M, cell.R, cell.p, cell.rho, cell.snr_db,
                      child_seed(spec.master_seed, ci, 0), 0,
                      iterations=len(states), converged=len(states) < spec.se_t_max,
                      se_nrmse=states[-1].predicted_nrmse)
    rec.wall_ms = (time.perf_counter() - t0) * 1e3
    return record_row(rec)


def cmd_se(cfg, args):
    spec = spec_from_config(cfg)
    threads = resolve_threads(args.threads)
    cells = list(enumerate(spec.cells()))
    out, close = _open_out(args.out)
    try:
        w = RecordWriter(out, args.format)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for row in pool.map(lambda c: _se_row(spec, *c), cells):
                w.write(row)
    finally:
        if close:
            out.close()
    return 0


def cmd_sweep(cfg, args):
    spec = spec_from_config(cfg)
    threads = resolve_threads(args.threads)
    out, close = _open_out(args.out)
    n_failed = 0
    try:
        w = RecordWriter(out, args.format)
        for rec in run_experiment(spec, threads):
            if rec.failed:
                n_failed += 1
                log.warning("trial failed: %s", rec.error)
            w.write(record_row(rec))
    finally:
        if close:
            out.close()
    if n_failed:
        log.warning("%d trials failed", n_failed)
    return 0


COMMANDS = {"solve": cmd_solve, "se": cmd_se, "sweep": cmd_sweep}


def build_parser():
    ap = argparse.ArgumentParser(prog="ucs", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--out", default="-", help="output path, '-' for stdout")
    ap.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE", help="override a config key (repeatable)")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads, 0 = all cores (env UCS_THREADS)")
    ap.add_argument("--seed", type=int, default=None, help="master seed override")
    ap.add_argument("--trace", default=None, help="per-iteration trace path (solve)")
    ap.add_argument("--dump-config", default=None, metavar="PATH",
                    help="write the effective config here before running")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["master_seed"] = args.seed
        if args.dump_config:
            with open(args.dump_config, "w", encoding="utf-8") as fh:
                fh.write(dump_config(cfg))
        return COMMANDS[args.command](cfg, args)
    except InputError as exc:
        print(f"ucs: error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, LinAlgError, FloatingPointError) as exc:
        print(f"ucs: numerical failure: {exc}", file=sys.stderr)
        return 3
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
