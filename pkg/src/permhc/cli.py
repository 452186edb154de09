"""Command-line front end: ``permhc {test,enumerate,simulate,monitor}``.

Exit codes: 0 on success, 2 for usage, input or degenerate-data errors, 3 for
an internal invariant violation.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
import warnings
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import Method
from .errors import DegenerateGridWarning, PermHCError
from .io import normalize_panel, read_matrix, read_panel, read_population
from .oracle import NullModel, approx_hc_test, oracle_hc_test
from .permute import PermutationPlan, Strategy, perm_hc_test, perm_max_test
from .pipeline import Mode, scan, scan_json, write_scan_csv
from .simgen import (
    PAPER_FIGURES,
    ExperimentSpec,
    manifest,
    paper_figure,
    run_experiments,
    write_plot_data,
    write_power_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
FIG7_PERMUTATIONS = 100_000


class UsageError(Exception):
    pass


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _unit_interval(s: str) -> float:
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def _method(s: str) -> Method:
    try:
        return Method.parse(s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for permutation replicates")
    p.add_argument("--out", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="permhc", description="Permutation higher criticism for sparse anomalous streams.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test one stream matrix")
    t.add_argument("--input", required=True, help="CSV stream matrix")
    t.add_argument("--layout", choices=("wide", "long"), default="wide")
    t.add_argument("--method", type=_method, action="append",
                   help="perm-hc (default), perm-max, oracle-hc or approx-hc; repeatable")
    t.add_argument("--permutations", type=_positive_int, default=1000, metavar="B")
    t.add_argument("--alpha", type=_unit_interval, default=0.05)
    t.add_argument("--grid-divisor", type=_positive_float, help="grid divisor d (default log n)")
    t.add_argument("--null-model", choices=("normal", "exponential"), default="normal",
                   help="null model of oracle-hc")
    t.add_argument("--lambda0", type=_positive_float, default=1.5, help="exponential null rate")
    t.add_argument("--calib-samples", type=_positive_int, default=10_000)
    _common(t)

    e = sub.add_parser("enumerate", help="exact p-values by enumerating all permutations (n*t <= 8)")
    e.add_argument("--input", required=True)
    e.add_argument("--layout", choices=("wide", "long"), default="wide")
    e.add_argument("--grid-divisor", type=_positive_float)
    _common(e)

    s = sub.add_parser("simulate", help="power curves from an experiment spec")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="JSON file with one spec object or a list of them")
    src.add_argument("--paper-figure", choices=PAPER_FIGURES)
    s.add_argument("--desk", action="store_true", help="one fifth of the replicates (wider intervals)")
    s.add_argument("--reps", type=_positive_int, help="override replicates per point")
    s.add_argument("--permutations", type=_positive_int, metavar="B", help="override B")
    s.add_argument("--calib-samples", type=_positive_int, help="override oracle calibration size")
    s.add_argument("--alpha", type=_unit_interval)
    s.add_argument("--manifest", help="JSON manifest path (default: <out>.json when --out is set)")
    s.add_argument("--plot-data", help="also write a long-format table with every setting per row")
    s.add_argument("--progress", action="store_true", help="report progress on stderr")
    _common(s)

    m = sub.add_parser("monitor", help="sliding-window scan of a panel of series")
    m.add_argument("--input", required=True, help="CSV panel")
    m.add_argument("--layout", choices=("long", "wide"), default="long")
    m.add_argument("--window", type=_positive_int, default=5, metavar="t")
    m.add_argument("--mode", choices=[x.value for x in Mode], default=Mode.RESIDUAL.value)
    m.add_argument("--permutations", type=_positive_int, metavar="B",
                   help=f"default 1000, or {FIG7_PERMUTATIONS} with --paper-figure 7")
    m.add_argument("--paper-figure", choices=("7",), help="use the monitoring defaults of the case study")
    m.add_argument("--exclusion-level", type=float, default=0.95,
                   help="max-test quantile for clear outliers; a value >= 1 disables exclusion")
    m.add_argument("--grid-divisor", type=_positive_float)
    m.add_argument("--per-stream", action="store_true", help="include per-stream p-values in the report")
    m.add_argument("--normalize-by", metavar="COLUMN", help="population column used to rescale to rates per 100k")
    m.add_argument("--population", help="CSV with stream_id and the --normalize-by column")
    m.add_argument("--report", help="JSON report path (default: <out>.json when --out is set)")
    _common(m)
    return ap


@contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _sidecar(explicit, out):
    if explicit:
        return explicit
    return None if out is None else str(Path(out).with_suffix(Path(out).suffix + ".json"))


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config(args, **extra) -> dict:
    cfg = {k: (v.value if isinstance(v, Method) else v) for k, v in vars(args).items() if k != "func"}
    if cfg.get("method"):
        cfg["method"] = [m.value for m in args.method]
    cfg.update(extra)
    cfg["version"] = __version__
    return cfg


def cmd_test(args) -> int:
    x = read_matrix(args.input, args.layout)
    methods = args.method or [Method.PERM_HC]
    plan = PermutationPlan(args.permutations, args.seed)
    model = NullModel(args.null_model, args.lambda0)
    results = []
    for m in methods:
        if m is Method.PERM_HC:
            r = perm_hc_test(x, plan, args.grid_divisor, threads=args.threads)
        elif m is Method.PERM_MAX:
            r = perm_max_test(x, plan, threads=args.threads)
        elif m is Method.APPROX_HC:
            r = approx_hc_test(x, plan, args.grid_divisor, threads=args.threads)
        else:
            r = oracle_hc_test(x, model, calib_samples=args.calib_samples, seed=args.seed, d=args.grid_divisor)
        if not 0.0 < r.p_value <= 1.0:
            raise AssertionError(f"p-value {r.p_value} outside (0, 1]")
        results.append(r.to_dict() | {"rejected": r.p_value <= args.alpha})
    body = {"config": _config(args, n=x.n, t=x.t, method=[m.value for m in methods]), "results": results}
    with _output(args.out) as fh:
        fh.write(_dump(body))
    return EXIT_OK


def cmd_enumerate(args) -> int:
    x = read_matrix(args.input, args.layout)
    plan = PermutationPlan(seed=args.seed, strategy=Strategy.FULL_ENUMERATION)
    results = [
        perm_max_test(x, plan).to_dict(),
        perm_hc_test(x, plan, args.grid_divisor).to_dict(),
    ]
    body = {"config": _config(args, n=x.n, t=x.t, permutations=math.factorial(x.n * x.t)), "results": results}
    with _output(args.out) as fh:
        fh.write(_dump(body))
    return EXIT_OK


def _load_specs(args) -> list[ExperimentSpec]:
    if args.paper_figure:
        specs = paper_figure(args.paper_figure, desk=args.desk, seed=args.seed)
    else:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read spec {args.spec}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"spec is not valid JSON: {exc}") from None
        raw = raw if isinstance(raw, list) else [raw]
        try:
            specs = [ExperimentSpec.from_dict(d) for d in raw]
        except (TypeError, KeyError, ValueError) as exc:
            raise UsageError(f"invalid spec: {exc}") from None
        if args.desk:
            specs = [replace(s, reps=max(1, s.reps // 5)) for s in specs]
    over = {}
    if args.reps:
        over["reps"] = args.reps
    if args.permutations:
        over["B"] = args.permutations
    if args.calib_samples:
        over["calib_samples"] = args.calib_samples
    if args.alpha:
        over["alpha"] = args.alpha
    return [replace(s, **over) for s in specs]


def _show_progress(k: int, rep: int) -> None:
    print(f"\rpoint {k + 1} rep {rep + 1}", end="", file=sys.stderr, flush=True)


def cmd_simulate(args) -> int:
    specs = _load_specs(args)
    runs = run_experiments(specs, _show_progress if args.progress else None, threads=args.threads)
    if args.progress:
        print(file=sys.stderr)
    buf = io.StringIO()
    write_power_csv([c for curves in runs for c in curves], buf)
    with _output(args.out) as fh:
        fh.write(buf.getvalue())
    path = _sidecar(args.manifest, args.out)
    if path:
        Path(path).write_text(manifest(specs, _config(args)) + "\n", encoding="utf-8")
    if args.plot_data:
        with open(args.plot_data, "w", encoding="utf-8", newline="") as fh:
            write_plot_data(list(zip(specs, runs)), fh)
    return EXIT_OK


def cmd_monitor(args) -> int:
    if (args.normalize_by is None) != (args.population is None):
        raise UsageError("--normalize-by and --population go together")
    if not args.exclusion_level > 0:
        raise UsageError("--exclusion-level must be positive")
    panel = read_panel(args.input, args.layout)
    if args.normalize_by:
        panel = normalize_panel(panel, read_population(args.population, args.normalize_by))
    if panel.T < args.window:
        raise UsageError(f"window {args.window} is longer than the panel ({panel.T} days)")
    B = args.permutations or (FIG7_PERMUTATIONS if args.paper_figure == "7" else 1000)
    level = args.exclusion_level if args.exclusion_level < 1 else None
    reports = scan(panel, args.window, args.mode, PermutationPlan(B, args.seed), args.grid_divisor, level,
                   per_stream=args.per_stream, threads=args.threads)
    for r in reports:
        if r.error:
            print(f"window {r.w}: {r.error}", file=sys.stderr)
    buf = io.StringIO()
    write_scan_csv(reports, buf)
    with _output(args.out) as fh:
        fh.write(buf.getvalue())
    path = _sidecar(args.report, args.out)
    if path:
        cfg = _config(args, permutations=B, n=panel.n, T=panel.T,
                      note="windows overlap, so their p-values are dependent; no joint inference is made")
        Path(path).write_text(scan_json(reports, cfg) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"test": cmd_test, "enumerate": cmd_enumerate, "simulate": cmd_simulate, "monitor": cmd_monitor}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateGridWarning)
            code = COMMANDS[args.command](args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return code
    except (PermHCError, UsageError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
