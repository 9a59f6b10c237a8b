"""Command line interface: ``fit``, ``simulate``, ``bands`` and ``score-trace``.

Every JSON report carries ``schema_version``, the resolved configuration, the
seed and the library version.  Wall-clock time and the worker count live
under the top-level ``runtime`` key; everything else is a pure function of
the inputs, so reports can be compared byte for byte with ``runtime`` removed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import RngStream, read_csv, read_targets_csv
from .exceptions import DataFormatError, OrthomedError
from .multi import bands_csv, bootstrap_stream, fit_all_targets, marginal_bands, \
    multiplier_bootstrap, simultaneous_bands
from .ortho import Algorithm, OrthoConfig, run_algorithm
from .simulation import (DESK_GRID, FULL_GRID, ALL_METHODS, DesignSpec, ThetaProfile,
                         grid_designs, rows_to_json, rows_to_long_csv, run_replications,
                         replication_stream, summarize)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2
COMMANDS = ("fit", "simulate", "bands", "score-trace")


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    output: str | None = None
    algorithm: str = "alg1"
    gamma: float | None = None
    c0: float = 1.1
    c: float = 1.1
    xi: float = 0.05
    seed: int = 0
    threads: int = 1
    reps: int = 200
    grid: list = field(default_factory=lambda: list(DESK_GRID))
    full: bool = False
    bootstrap_draws: int = 2000
    no_penalty_intercept: bool = False
    bandwidth: str = "koenker"
    c_h: float = 1.0
    j_method: str = "product"
    lambda_qr: float | None = None
    lambda_lasso: float | None = None
    profile: str = ThetaProfile.EXACT_SPARSE_10.value
    n: int = 250
    p: int = 300

    def validate(self) -> list[str]:
        errs = []
        if self.command not in COMMANDS:
            errs.append(f"unknown command {self.command!r}")
        if not 0 < self.xi < 1:
            errs.append("--xi must lie in (0, 1)")
        if self.gamma is not None and not 0 < self.gamma < 1:
            errs.append("--gamma must lie in (0, 1)")
        if self.c0 <= 1:
            errs.append("--c0 must exceed 1")
        if self.c <= 1:
            errs.append("--c must exceed 1")
        if self.c_h <= 0:
            errs.append("--c-h must be positive")
        if self.threads < 1:
            errs.append("--threads must be at least 1")
        if self.reps < 1:
            errs.append("--reps must be at least 1")
        if self.bootstrap_draws < 200:
            errs.append("--bootstrap-draws must be at least 200")
        if any(not 0 <= g < 1 for g in self.grid):
            errs.append("--grid values must lie in [0, 1)")
        if self.command in ("fit", "bands", "score-trace"):
            if not self.input:
                errs.append(f"{self.command} requires --input")
            elif not Path(self.input).is_file():
                errs.append(f"--input {self.input} does not exist")
        try:
            Algorithm(self.algorithm)
        except ValueError:
            errs.append(f"unknown algorithm {self.algorithm!r}")
        return errs

    def ortho_config(self) -> OrthoConfig:
        return OrthoConfig(algorithm=Algorithm(self.algorithm), gamma=self.gamma, c0=self.c0,
                           c=self.c, xi=self.xi, seed=self.seed,
                           penalize_intercept=not self.no_penalty_intercept,
                           bandwidth=self.bandwidth, c_h=self.c_h, j_method=self.j_method,
                           lambda_qr=self.lambda_qr, lambda_lasso=self.lambda_lasso)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        raw = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in names})


def _grid(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input")
    common.add_argument("--output")
    common.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="alg1")
    common.add_argument("--gamma", type=float)
    common.add_argument("--c0", type=float, default=1.1)
    common.add_argument("--c", type=float, default=1.1)
    common.add_argument("--xi", type=float, default=0.05)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int)
    common.add_argument("--no-penalty-intercept", action="store_true")
    common.add_argument("--bandwidth", choices=["koenker", "scaled-sd"], default="koenker")
    common.add_argument("--c-h", type=float, default=1.0, help="scale of the scaled-sd bandwidth")
    common.add_argument("--j-method", choices=["product", "pointwise"], default="product")
    common.add_argument("--lambda-qr", type=float, help="fixed penalty for the median step")
    common.add_argument("--lambda-lasso", type=float, help="fixed penalty for the lasso step")

    parser = argparse.ArgumentParser(prog="orthomed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="inference on one treatment coefficient")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo grid")
    sim.add_argument("--reps", type=int, help="replications per design (default 200)")
    sim.add_argument("--grid", type=_grid)
    sim.add_argument("--full", action="store_true", help="10 x 10 grid with 500 reps (hours)")
    sim.add_argument("--profile", choices=[t.value for t in ThetaProfile],
                     default=ThetaProfile.EXACT_SPARSE_10.value)
    sim.add_argument("--n", type=int, default=250)
    sim.add_argument("--p", type=int, default=300)
    bands = sub.add_parser("bands", parents=[common], help="simultaneous bands for d1..dk")
    bands.add_argument("--bootstrap-draws", type=int, default=2000)
    sub.add_parser("score-trace", parents=[common], help="dump n L_n(alpha) on its breakpoints")
    return parser


def parse_cli(argv=None) -> RunConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    threads = ns.threads
    if threads is None:
        env = os.environ.get("ORTHOMED_THREADS")
        try:
            threads = int(env) if env else 1
        except ValueError:
            parser.error(f"ORTHOMED_THREADS={env!r} is not an integer")
    vals = {k: v for k, v in vars(ns).items() if v is not None}
    vals["threads"] = threads
    conflicts = []
    if vals.get("full"):
        if "grid" in vals:
            conflicts.append("--full conflicts with --grid")
        if "reps" in vals:
            conflicts.append("--full conflicts with --reps")
        vals["grid"], vals["reps"] = list(FULL_GRID), 500
    cfg = RunConfig(**vals)
    errs = conflicts + cfg.validate()
    if errs:
        parser.error("; ".join(errs))
    return cfg


def _report(cfg: RunConfig, body: dict, started: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "library_version": __version__,
        "command": cfg.command,
        "seed": cfg.seed,
        "config": {k: v for k, v in asdict(cfg).items() if k != "threads"},
        **body,
        "runtime": {
            "threads": cfg.threads,
            "wall_seconds": time.perf_counter() - started,
            "finished_utc": datetime.now(timezone.utc).isoformat(),
        },
    }


def _emit(report: dict, output: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _sidecar(output: str | None, suffix: str) -> Path | None:
    if not output:
        return None
    out = Path(output)
    return out.with_name(out.stem + suffix)


def cmd_fit(cfg: RunConfig) -> dict:
    sample = read_csv(cfg.input)
    res = run_algorithm(sample, cfg.ortho_config(), RngStream(cfg.seed, 0))
    return {"result": res.to_dict()}


def cmd_score_trace(cfg: RunConfig) -> dict:
    sample = read_csv(cfg.input)
    res = run_algorithm(sample, cfg.ortho_config(), RngStream(cfg.seed, 0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "n_L"])
    for a, s in res.score_at_alpha:
        w.writerow([repr(float(a)), repr(float(s))])
    path = _sidecar(cfg.output, "_trace.csv")
    if path is not None:
        path.write_text(buf.getvalue())
    return {"alpha_check": res.alpha_check,
            "score_region": res.score_region.to_dict(),
            "trace_csv": str(path) if path else None,
            "trace": [[float(a), float(s)] for a, s in res.score_at_alpha]}


def cmd_simulate(cfg: RunConfig) -> dict:
    base = DesignSpec(n=cfg.n, p=cfg.p, theta_profile=cfg.profile, seed=cfg.seed)
    designs = grid_designs(cfg.grid, base)
    oc = replace(cfg.ortho_config(), algorithm=Algorithm.ALG1)
    outcomes = run_replications(designs, cfg.reps, ALL_METHODS, cfg.threads, oc)
    rows = summarize(outcomes)
    provenance = []
    for d in designs:
        for r in range(cfg.reps):
            key = replication_stream(d, r)
            fails = sorted({o.method.value for o in outcomes
                            if o.design == d and o.rep == r and o.failed})
            provenance.append({"r2y": d.r2y, "r2d": d.r2d, "rep": r,
                               "stream": list(key.stream_id), "failed_methods": fails})
    path = _sidecar(cfg.output, "_table.csv")
    if path is not None:
        path.write_text(rows_to_long_csv(rows))
    return {"design": base.to_dict(), "table": rows_to_json(rows),
            "table_csv": str(path) if path else None, "provenance": provenance}


def cmd_bands(cfg: RunConfig) -> dict:
    y, D, U = read_targets_csv(cfg.input)
    est, infl = fit_all_targets(y, D, U, cfg.ortho_config(), seed=cfg.seed,
                                threads=cfg.threads)
    if infl.targets.size == 0:
        raise OrthomedError("every target failed: " + "; ".join(est.errors))
    c_hat, _ = multiplier_bootstrap(infl, cfg.bootstrap_draws, bootstrap_stream(cfg.seed), cfg.xi)
    sim = simultaneous_bands(est, c_hat)
    marg = marginal_bands(est, cfg.xi)
    path = _sidecar(cfg.output, "_bands.csv")
    if path is not None:
        path.write_text(bands_csv(est, sim))
    targets = []
    for j in range(est.p1):
        targets.append({"target": f"d{j + 1}", "alpha_hat": est.alpha[j],
                        "sigma_hat": est.sigma[j], "simultaneous": list(sim[j]),
                        "marginal": list(marg[j]), "error": est.errors[j]})
    return {"critical_value": c_hat, "bootstrap_draws": cfg.bootstrap_draws,
            "targets": targets, "bands_csv": str(path) if path else None}


HANDLERS = {"fit": cmd_fit, "simulate": cmd_simulate, "bands": cmd_bands,
            "score-trace": cmd_score_trace}


def run(cfg: RunConfig) -> int:
    started = time.perf_counter()
    try:
        body = HANDLERS[cfg.command](cfg)
    except (DataFormatError, ValueError) as exc:
        _emit(_report(cfg, {"status": "error", "error": str(exc)}, started), cfg.output)
        return EXIT_USAGE
    except (OrthomedError, np.linalg.LinAlgError) as exc:
        _emit(_report(cfg, {"status": "error", "error": f"{type(exc).__name__}: {exc}"},
                      started), cfg.output)
        return EXIT_COMPUTE
    _emit(_report(cfg, {"status": "ok", **body}, started), cfg.output)
    return EXIT_OK


def main(argv=None) -> int:
    cfg = parse_cli(argv)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
