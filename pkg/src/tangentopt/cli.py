"""Command line front end: ``tangentopt {solve,minimax,auxetic-demo,diagnose}``.

Problem files follow the JSON schema of :func:`tangentopt.model.problem_from_dict`,
optionally with a ``config`` object (``eta``, ``tol``, ``max_iters``,
``rho_min``, ``policy``, ``halve_eta``). Precedence: command-line flag, then
the file's ``config``, then the library defaults.

Exit codes: 0 converged (``diagnose``: rate verified), 1 input error,
2 maximum iterations (``diagnose``: tail too short), 3 numerical failure,
4 ``diagnose`` ran but did not verify a linear rate.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from typing import Any, Sequence

import numpy as np

from . import __version__, expr
from .active_set import run_active_set
from .diagnostics import InsufficientTail, convergence_report
from .elasticity import IDENTITY_START, build_auxetic_problem, cholesky_stiffness, invert, poisson_ratio
from .equality import run_equality
from .minimax import MinimaxProblem, epigraph_reformulate, run_minimax
from .model import (
    DeactivationPolicy,
    IterationRecord,
    Problem,
    ProblemError,
    SolverConfig,
    SolverError,
    Status,
    problem_from_dict,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAX_ITER = 2
EXIT_NUMERICAL = 3
EXIT_NOT_VERIFIED = 4

_STATUS_EXIT = {
    Status.CONVERGED: EXIT_OK,
    Status.MAX_ITERATIONS: EXIT_MAX_ITER,
    Status.NUMERICAL_FAILURE: EXIT_NUMERICAL,
}

_CONFIG_KEYS = {
    "eta": "eta",
    "tol": "tol",
    "max_iters": "max_iter",
    "rho_min": "rho_min",
    "policy": "policy",
    "halve_eta": "halve_eta",
}


class InputError(Exception):
    pass


# --- artifacts ----------------------------------------------------------------


class TraceWriter:
    """Streams iteration records to a JSON array, flushing after each one.

    A run stopped by the iteration limit (or killed) still leaves every
    record written so far; :meth:`close` completes the array.
    """

    def __init__(self, trace_path: str | None, csv_path: str | None):
        self._trace = open(trace_path, "w") if trace_path else None
        self._csv = open(csv_path, "w", newline="") if csv_path else None
        self._rows = csv.writer(self._csv, lineterminator="\n") if self._csv else None
        self.count = 0
        if self._trace:
            self._trace.write("[")
        if self._rows:
            self._rows.writerow(["k", "f", "gnorm", "step", "active_count"])

    def __call__(self, rec: IterationRecord) -> None:
        if self._trace:
            self._trace.write(("," if self.count else "") + "\n" + json.dumps(_clean(rec.to_dict())))
            self._trace.flush()
        if self._rows:
            self._rows.writerow([rec.k, repr(float(rec.f)), repr(rec.active_norm), repr(rec.step_norm), len(rec.active)])
            self._csv.flush()
        self.count += 1

    def close(self) -> None:
        if self._trace:
            self._trace.write("\n]\n")
            self._trace.close()
        if self._csv:
            self._csv.close()


def _clean(obj: Any) -> Any:
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(result: dict, path: str | None) -> None:
    text = json.dumps(_clean(result), indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def load_trace(path: str) -> list[IterationRecord]:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise InputError(f"{path}: a trace is a JSON list of iteration records")
    try:
        return [IterationRecord.from_dict(d) for d in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed iteration record ({exc})") from exc


# --- configuration ------------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemError(f"invalid JSON: {exc}", "$") from exc


def build_config(data: Any, args: argparse.Namespace) -> SolverConfig:
    kwargs: dict[str, Any] = {}
    file_cfg = data.get("config", {}) if isinstance(data, dict) else {}
    if not isinstance(file_cfg, dict):
        raise ProblemError("expected an object", "config")
    for key, value in file_cfg.items():
        if key not in _CONFIG_KEYS:
            raise ProblemError(f"unknown key (expected one of {sorted(_CONFIG_KEYS)})", f"config.{key}")
        kwargs[_CONFIG_KEYS[key]] = value
    for flag, key in (("eta", "eta"), ("tol", "tol"), ("max_iters", "max_iter"), ("policy", "policy")):
        if getattr(args, flag, None) is not None:
            kwargs[key] = getattr(args, flag)
    if getattr(args, "halve_eta", False):
        kwargs["halve_eta"] = True
    try:
        return SolverConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ProblemError(str(exc), "config") from exc


def _strip(data: dict, *keys: str) -> dict:
    return {k: v for k, v in data.items() if k not in keys}


# --- commands -----------------------------------------------------------------


def _finish_solve(res, writer: TraceWriter, args) -> int:
    writer.close()
    _emit(res.to_dict(), args.result)
    print(res.message, file=sys.stderr)
    return _STATUS_EXIT[res.status]


def cmd_solve(args: argparse.Namespace) -> int:
    data = _read_json(args.problem)
    cfg = build_config(data, args)
    p, x0 = problem_from_dict(_strip(data, "config") if isinstance(data, dict) else data)
    writer = TraceWriter(args.trace, args.csv)
    try:
        solver = run_equality if p.only_equalities else run_active_set
        res = solver(p, x0, cfg, writer)
    except BaseException:
        writer.close()
        raise
    return _finish_solve(res, writer, args)


def minimax_from_dict(data: Any) -> tuple[MinimaxProblem, np.ndarray]:
    """Minimax file: the ``solve`` schema with ``objectives`` (a list of
    expressions) in place of ``objective``; ``ring`` indexes ``objectives``."""
    if not isinstance(data, dict):
        raise ProblemError("problem must be a JSON object", "$")
    objs = data.get("objectives")
    if not isinstance(objs, list) or not objs:
        raise ProblemError("expected a non-empty list of expressions", "objectives")
    p, x0 = problem_from_dict(_strip(data, "objectives", "ring", "config", "objective"), objective_key=None)
    funs = []
    for i, text in enumerate(objs):
        path = f"objectives[{i}]"
        if not isinstance(text, str):
            raise ProblemError("expected an expression string", path)
        try:
            e = expr.parse(text)
        except expr.ParseError as exc:
            raise ProblemError(str(exc), path) from exc
        if expr.max_index(e) > p.n:
            raise ProblemError(f"uses x{expr.max_index(e)} but n={p.n}", path)
        funs.append(expr.as_function(e))
    ring = data.get("ring")
    if ring is not None and (not isinstance(ring, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in ring)):
        raise ProblemError("expected a list of integers", "ring")
    mp = MinimaxProblem(p.n, tuple(funs), tuple(ring) if ring else None, p.constraints, tuple(objs))
    return mp, x0


def cmd_minimax(args: argparse.Namespace) -> int:
    data = _read_json(args.problem)
    cfg = build_config(data, args)
    mp, x0 = minimax_from_dict(data)
    writer = TraceWriter(args.trace, args.csv)
    try:
        res = run_minimax(mp, x0, cfg, writer)
    except BaseException:
        writer.close()
        raise
    writer.close()
    _emit(res.to_dict(), args.result)
    print(res.solve.message, file=sys.stderr)
    return _STATUS_EXIT[res.status]


def cmd_auxetic(args: argparse.Namespace) -> int:
    cfg = build_config({}, args)
    mp = build_auxetic_problem(args.directions, args.min_diagonal)
    writer = TraceWriter(args.trace, args.csv)
    history: list[tuple[int, float, float]] = []

    def record(rec: IterationRecord) -> None:
        writer(rec)
        # lifted objective constraints are f_i - z
        nus = np.asarray(rec.constraint_values[: mp.m]) + rec.x[-1]
        history.append((rec.k, float(nus.max()), float(nus.min())))

    try:
        res = run_minimax(mp, IDENTITY_START, cfg, record)
    except BaseException:
        writer.close()
        raise
    writer.close()
    if args.nu_csv:
        with open(args.nu_csv, "w", newline="") as fh:
            rows = csv.writer(fh, lineterminator="\n")
            rows.writerow(["k", "max_nu", "min_nu"])
            rows.writerows([k, repr(a), repr(b)] for k, a, b in history)
    c = cholesky_stiffness(res.x)
    d = invert(c).matrix
    angles = [180.0 * i / args.directions for i in range(args.directions)]
    out = res.to_dict()
    out.update(
        stiffness=[[float(v) for v in row] for row in c],
        compliance=[[float(v) for v in row] for row in d],
        directions_deg=angles,
        poisson=[float(poisson_ratio(d, a)) for a in angles],
        active_directions=[angles[i] for i in res.active_objectives],
        max_nu_history=[a for _, a, _ in history],
    )
    _emit(out, args.result)
    print(f"{res.solve.message}; max nu = {max(out['poisson']):.6f}", file=sys.stderr)
    return _STATUS_EXIT[res.status]


def _problem_for_trace(data: Any) -> Problem:
    if isinstance(data, dict) and "objectives" in data:
        return epigraph_reformulate(minimax_from_dict(data)[0])
    return problem_from_dict(_strip(data, "config") if isinstance(data, dict) else data)[0]


def cmd_diagnose(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace_file)
    p = _problem_for_trace(_read_json(args.problem))
    if not trace:
        raise InsufficientTail("empty trace")
    for rec in trace:
        if len(rec.x) != p.n or len(rec.constraint_values) != p.m:
            raise InputError(
                f"trace record {rec.k} has dimension {len(rec.x)} with {len(rec.constraint_values)} "
                f"constraint values; problem has n={p.n}, m={p.m}"
            )
        if any(i >= p.m for i in rec.active):
            raise InputError(f"trace record {rec.k} has an active index outside the problem")
    x_star = None
    if args.x_star is not None:
        x_star = np.array(args.x_star, dtype=float)
        if x_star.shape != (p.n,):
            raise InputError(f"--x-star needs {p.n} values")
    report = convergence_report(trace, x_star, p, min_tail=args.min_tail, seed=args.seed)
    out = report.to_dict()
    if not args.with_errors:
        out.pop("errors")
    _emit(out, args.result)
    return EXIT_OK if report.verified else EXIT_NOT_VERIFIED


# --- parser -------------------------------------------------------------------


def _solver_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--eta", type=float, help="step size (overrides the file config)")
    sp.add_argument("--tol", type=float, help="stop when the step norm drops below this")
    sp.add_argument("--max-iters", type=int, help="iteration limit N")
    sp.add_argument("--policy", choices=[p.value for p in DeactivationPolicy])
    sp.add_argument("--halve-eta", action="store_true", help="halve eta on 'going too fast' events")
    sp.add_argument("--result", help="result JSON path (default: stdout)")
    sp.add_argument("--trace", help="trace JSON path, written incrementally")
    sp.add_argument("--csv", help="history CSV path (k,f,gnorm,step,active_count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tangentopt", description="Tangential-gradient constrained optimisation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="minimise an objective under constraints")
    sp.add_argument("problem")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("minimax", help="minimise the largest of several objectives")
    sp.add_argument("problem")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_minimax)

    sp = sub.add_parser("auxetic-demo", help="minimise the largest directional Poisson ratio")
    sp.add_argument("--directions", type=int, default=10, help="number of directions k in [0, 180)")
    sp.add_argument("--min-diagonal", type=float, default=0.05)
    sp.add_argument("--nu-csv", help="per-iteration max/min Poisson ratio CSV (k,max_nu,min_nu)")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_auxetic, max_iters=None)

    sp = sub.add_parser("diagnose", help="fit convergence rates to a trace")
    sp.add_argument("trace_file")
    sp.add_argument("problem")
    sp.add_argument("--x-star", type=float, nargs="+", help="known solution (default: last iterate)")
    sp.add_argument("--min-tail", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0, help="power-iteration start vector seed")
    sp.add_argument("--with-errors", action="store_true", help="include the error sequence")
    sp.add_argument("--result", help="report JSON path (default: stdout)")
    sp.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InsufficientTail as exc:
        print(f"error: insufficient tail: {exc}", file=sys.stderr)
        return EXIT_MAX_ITER
    except (ProblemError, InputError, expr.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
