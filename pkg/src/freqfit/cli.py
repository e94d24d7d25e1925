"""Command-line driver.

    freqfit update <config.json> [--out DIR] [--max-depth N] [--epsilon E] [--seed S] [--threads N]
    freqfit sensitivity <config.json> [--out DIR] [--seed S] [--threads N] [--r R] [--levels L]
    freqfit solve <config.json> --at x1,x2,...

Exit status: 0 success, 2 configuration error, 3 infeasible problem,
4 no convergence. Log verbosity follows ``FREQFIT_LOG_LEVEL`` (default INFO).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .config import RunConfig, build_pencil, build_problem, load_config
from .eig import solve_modes
from .errors import ConfigError, ConvergenceError, FreqFitError, InfeasibleProblem, NotPositiveDefinite
from .global_opt import solve_global
from .sensitivity import EETDesign, elementary_effects

log = logging.getLogger("freqfit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4
LOG_ENV = "FREQFIT_LOG_LEVEL"


def _log_level() -> int:
    name = os.environ.get(LOG_ENV, "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


class _RunLog:
    """Attach a log file in the output directory for the duration of a run."""

    def __init__(self, directory: Path, name: str = "run.log"):
        self.path = directory / name
        self.handler = None

    def __enter__(self):
        self.handler = logging.FileHandler(self.path, mode="w", encoding="utf-8")
        self.handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger("freqfit").addHandler(self.handler)
        return self

    def __exit__(self, *exc):
        logging.getLogger("freqfit").removeHandler(self.handler)
        self.handler.close()
        return False


def _prepare(args, **overrides) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(out=getattr(args, "out", None), **overrides)


def run_update(cfg: RunConfig) -> int:
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    with _RunLog(out):
        log.info("effective configuration: %s", json.dumps(cfg.effective(), sort_keys=False))
        t0 = time.perf_counter()
        problem = build_problem(cfg)
        registry = solve_global(problem, cfg.global_)
        doc = report.minima_document(problem, registry, cfg.diagnostics.small_thr, cfg.diagnostics.large_thr)
        report.write_json(out / "minima.json", doc)
        header, rows = report.summary_table(doc)
        report.write_csv(out / "summary.csv", header, rows)
        elapsed = time.perf_counter() - t0
        log.info(
            "minima: %d, global index %d, local solves %d, evaluations %d, boundary rejects %d, time %.3f s",
            len(registry.records),
            registry.global_index,
            registry.local_solves,
            registry.evaluations,
            registry.boundary_rejects,
            elapsed,
        )
    return EXIT_OK


def run_sensitivity(cfg: RunConfig) -> int:
    if cfg.sensitivity is None:
        raise ConfigError("config.sensitivity: required for the sensitivity command")
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    with _RunLog(out, "sensitivity.log"):
        log.info("effective configuration: %s", json.dumps(cfg.effective(), sort_keys=False))
        t0 = time.perf_counter()
        problem = build_problem(cfg)
        s = cfg.sensitivity
        design = EETDesign(problem.box, r=s.r, levels=s.levels, delta=s.delta, seed=s.seed)
        rep = elementary_effects(problem, design, threads=s.threads)
        outputs = [f"f{i + 1}" for i in range(problem.q)]
        doc = report.eet_document(rep, design, outputs)
        report.write_json(out / "eet.json", doc)
        (wh, wide), (lh, long) = report.eet_tables(doc)
        report.write_csv(out / "eet.csv", wh, wide)
        report.write_csv(out / "eet_long.csv", lh, long)
        log.info("EET: %d evaluations, %d dropped, time %.3f s", rep.evaluations, rep.dropped, time.perf_counter() - t0)
    return EXIT_OK


def run_solve(cfg: RunConfig, at: str, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        x = np.array([float(v) for v in at.split(",")])
    except ValueError:
        raise ConfigError(f"--at: expected comma-separated numbers, got {at!r}") from None
    pencil = build_pencil(cfg.model, cfg.base_dir)
    if x.size != pencil.p:
        raise ConfigError(f"--at: expected {pencil.p} values, got {x.size}")
    q = cfg.targets.size if cfg.targets is not None else cfg.modes
    sol = solve_modes(pencil, x, q, cfg.solver)
    stream.write("mode,lambda,freq_hz,residual\n")
    for i in range(sol.q):
        stream.write(f"{i + 1},{report.fmt(sol.lambdas[i])},{report.fmt(sol.freqs[i])},{report.fmt(sol.residuals[i])}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqfit", description="Frequency-based model updating.")
    sub = parser.add_subparsers(dest="command", required=True)

    up = sub.add_parser("update", help="find all local minima and report identifiability")
    up.add_argument("config")
    up.add_argument("--out")
    up.add_argument("--max-depth", type=int)
    up.add_argument("--epsilon", type=float)
    up.add_argument("--seed", type=int)
    up.add_argument("--threads", type=int)

    se = sub.add_parser("sensitivity", help="elementary-effects screening")
    se.add_argument("config")
    se.add_argument("--out")
    se.add_argument("--seed", type=int)
    se.add_argument("--threads", type=int)
    se.add_argument("--r", type=int)
    se.add_argument("--levels", type=int)

    so = sub.add_parser("solve", help="one modal solve at a parameter point")
    so.add_argument("config")
    so.add_argument("--at", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=_log_level(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("freqfit").setLevel(_log_level())
    try:
        if args.command == "update":
            return run_update(_prepare(args, max_depth=args.max_depth, epsilon=args.epsilon, seed=args.seed, threads=args.threads))
        if args.command == "sensitivity":
            return run_sensitivity(_prepare(args, seed=args.seed, threads=args.threads, r=args.r, levels=args.levels))
        return run_solve(load_config(args.config), args.at)
    except ConfigError as exc:
        print(f"freqfit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleProblem, NotPositiveDefinite) as exc:
        print(f"freqfit: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"freqfit: no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except FreqFitError as exc:
        # Remaining model errors stem from the configured input.
        print(f"freqfit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
