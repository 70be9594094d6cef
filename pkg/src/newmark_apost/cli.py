"""Command line: ``ode``, ``wave`` and ``diagnose`` runs writing CSV reports.

Exit status is 0 on success, 2 for configuration errors (reported before
any computation) and 1 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .estimators import TIME_NORMS, EstimatorConfig, EstimatorReport, diagnostics
from .experiments import (CaseSpec, ExperimentError, MeshSpec, TauLaw, evaluate, prepare,
                          run_experiment, simulate, worker_count)
from .mesh import TimeGrid, alternating_timegrid_with_steps
from .ode import OdeProblem, ode_error_series, ode_eta_T, ode_run

SUMMARY_COLUMNS = ["case", "h", "tau_law", "tau", "N", "data_mode", "eta_T", "eta_S1",
                   "eta_S2", "eta_S", "N0", "M1", "M2", "e", "ei"]
SERIES_COLUMNS = ["t_k", "eta_T", "cumulative", "e"]


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def fmt(x) -> str:
    """17 significant digits; None becomes an empty cell."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def summary_row(report: EstimatorReport, case: str, h: Optional[float], tau_law: str,
                grid: TimeGrid, data_mode: Optional[str]) -> dict:
    return {
        "case": case, "h": h, "tau_law": tau_law, "tau": grid.tau, "N": grid.N,
        "data_mode": data_mode, "eta_T": report.eta_T_total, "eta_S1": report.eta_S1,
        "eta_S2": report.eta_S2, "eta_S": report.eta_S, "N0": report.N0, "M1": report.M1,
        "M2": report.M2, "e": report.true_error, "ei": report.effectivity,
    }


def series_rows(report: EstimatorReport, grid: TimeGrid):
    """One row per k = 0..N-1: eta_T(t_k), the running sum of tau eta_T and e up to t_k."""
    contrib = grid.steps * report.eta_T_per_step
    cumulative = np.cumsum(contrib)
    # the last partial sum is the reported total, not a re-rounded copy of it
    cumulative[-1] = report.eta_T_total
    running = None
    if report.error_series is not None:
        running = np.maximum.accumulate(report.error_series)
    for k in range(grid.N):
        yield {"t_k": grid.instants[k], "eta_T": report.eta_T_per_step[k],
               "cumulative": cumulative[k], "e": None if running is None else running[k]}


def _write_csv(rows, columns, sink):
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])


def _summary(report, config):
    return summary_row(report, config["case"], config.get("h"), config["tau_law"],
                       config["grid"], config.get("data_mode"))


def emit_report(report: EstimatorReport, config: dict, sink, series_sink=None) -> None:
    """Summary row to ``sink`` and, when given, the per-step series to ``series_sink``.

    ``config`` holds the descriptive columns: case, h, tau_law, grid, data_mode.
    """
    _write_csv([_summary(report, config)], SUMMARY_COLUMNS, sink)
    if series_sink is not None:
        _write_csv(series_rows(report, config["grid"]), SERIES_COLUMNS, series_sink)


def read_summary(source) -> list[dict]:
    """Parse a summary CSV back; empty cells become None."""
    out = []
    for rec in csv.DictReader(source):
        row = {}
        for k, v in rec.items():
            if v == "":
                row[k] = None
            elif k == "N":
                row[k] = int(v)
            elif k in ("case", "tau_law", "data_mode"):
                row[k] = v
            else:
                row[k] = float(v)
        out.append(row)
    return out


def _open_out(path: str):
    if path == "-":
        return _Stdout()
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()


# -- subcommands ------------------------------------------------------------

def _ode(args):
    if args.N < 2:
        raise ConfigError(f"--N must be an integer >= 2, got {args.N}")
    if not (args.A > 0 and math.isfinite(args.A)):
        raise ConfigError(f"--A must be positive, got {args.A}")
    if not (args.T > 0 and math.isfinite(args.T)):
        raise ConfigError(f"--T must be positive, got {args.T}")
    if args.grid == "alternating":
        if not 0 < args.ratio <= 1:
            raise ConfigError(f"--ratio must lie in (0, 1], got {args.ratio}")
        if args.N % 2:
            raise ConfigError(f"alternating grids need an even --N, got {args.N}")
        grid = alternating_timegrid_with_steps(args.N, args.ratio, args.T)
        tau_star = args.T / ((args.N // 2) * (1 + args.ratio))
        law = f"alternating:{tau_star!r},{args.ratio!r}"
    else:
        grid = TimeGrid.uniform(args.T, args.N)
        law = f"uniform:{args.T / args.N!r}"
    problem = OdeProblem.free_oscillation(args.A, args.T)
    traj = ode_run(problem, grid)
    per_step, total = ode_eta_T(traj, args.A)
    exact_u, exact_v = problem.exact()
    errors = ode_error_series(traj, exact_u, exact_v, args.A)
    report = EstimatorReport(per_step, total, 0.0, 0.0, true_error=float(errors.max()),
                             error_series=errors)
    return [(report, {"case": f"ode:A={fmt(args.A)}", "tau_law": law, "grid": grid})]


def _case_spec(args, data_mode):
    try:
        mesh = MeshSpec.parse(args.mesh)
        law = TauLaw.parse(args.tau)
        config = EstimatorConfig(time_norm=args.time_norm, data_mode=data_mode)
        if not (args.T > 0 and math.isfinite(args.T)):
            raise ValueError(f"--T must be positive, got {args.T}")
        return CaseSpec(args.case, mesh, law, data_mode, config, args.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _prepare(spec):
    try:
        return prepare(spec)
    except ExperimentError as exc:
        # mesh files and time grids are configuration, checked before solving
        raise ConfigError(str(exc)) from None


def _wave(args):
    spec = _case_spec(args, args.data)
    p = _prepare(spec)
    report = run_experiment(spec, p)
    return [(report, {"case": spec.case, "h": p.h, "tau_law": str(spec.tau_law),
                      "grid": p.grid, "data_mode": spec.data_mode})]


def _diagnose(args, workers: int):
    specs = [_case_spec(args, mode) for mode in ("nodal", "projection")]
    prepared = _prepare(specs[0])
    if not prepared.grid.is_uniform():
        raise ConfigError("diagnose needs a uniform time-step law")

    space = prepared.space
    # fill the shared caches before the workers read them
    space.M.factor, space.K.factor, space.quadrature, space.gradients

    def one(spec):
        sim = simulate(spec, prepared)
        d = diagnostics(sim.trajectory, space.M, space.K, sim.Ph_u0, with_z=True)
        return evaluate(spec, sim), d

    with ThreadPoolExecutor(max_workers=min(len(specs), workers)) as pool:
        results = list(pool.map(one, specs))
    out = []
    for spec, (report, d) in zip(specs, results):
        out.append((report, {"case": spec.case, "h": prepared.h, "tau_law": str(spec.tau_law),
                             "grid": prepared.grid, "data_mode": spec.data_mode, "Z": d.Z}))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="newmark-apost",
                     description="Newmark wave solver with a posteriori error estimators")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ode = sub.add_parser("ode", help="scalar model u'' + A u = 0, u = cos(sqrt(A) t)")
    ode.add_argument("--A", type=float, required=True, help="stiffness, > 0")
    ode.add_argument("--N", type=int, required=True, help="number of time steps, >= 2")
    ode.add_argument("--T", type=float, default=1.0)
    ode.add_argument("--grid", choices=["uniform", "alternating"], default="uniform")
    ode.add_argument("--ratio", type=float, default=0.1,
                     help="short/long step ratio of the alternating grid")

    for name, help_ in (("wave", "one wave run with estimators and true error"),
                        ("diagnose", "both data modes with N0, M1, M2 and Z(n)")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--case", choices=["a", "b", "c", "zero"], required=True)
        p.add_argument("--mesh", required=True,
                       help="structured:n | file:path | perturbed:n,amplitude,seed")
        p.add_argument("--tau", required=True,
                       help="uniform:tau | sqrt-h | equal-h | alternating:tau_star,ratio")
        if name == "wave":
            p.add_argument("--data", choices=["nodal", "projection"], default="nodal")
        p.add_argument("--T", type=float, default=1.0)
        p.add_argument("--time-norm", choices=TIME_NORMS, default="euclidean",
                       help="combine the two eta_T residual norms as a root of squares or a sum")

    for p in sub.choices.values():
        p.add_argument("--out", default="-", help="summary CSV path, '-' for stdout")
        p.add_argument("--series", metavar="PATH",
                       help="also write the per-step series (Z(n) for diagnose)")
    return parser


def _write_outputs(command, results, out, series):
    with _open_out(out) as sink:
        _write_csv([_summary(r, cfg) for r, cfg in results], SUMMARY_COLUMNS, sink)
    if series is None:
        return
    with _open_out(series) as sink:
        if command != "diagnose":
            report, cfg = results[0]
            _write_csv(series_rows(report, cfg["grid"]), SERIES_COLUMNS, sink)
            return
        rows = [{"data_mode": cfg["data_mode"], "n": n, "t_n": cfg["grid"].instants[n], "Z": z}
                for _, cfg in results for n, z in enumerate(cfg["Z"], start=2)]
        _write_csv(rows, ["data_mode", "n", "t_n", "Z"], sink)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        try:
            workers = worker_count()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for path in (args.out, args.series):
            if path and path != "-" and not Path(path).resolve().parent.is_dir():
                raise ConfigError(f"output directory for {path} does not exist")
        if args.command == "diagnose":
            results = _diagnose(args, workers)
        else:
            results = {"ode": _ode, "wave": _wave}[args.command](args)
        _write_outputs(args.command, results, args.out, args.series)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExperimentError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
