"""Command-line entry point: ``nslab <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checks, storage
from .covering import dimension_exponent, parse_d_grid, premeasure_trend
from .criterion import CoverageError, CriterionParams, admissible_delta, detect_bad_points
from .paraproduct import ResolutionError
from .solver import NumericalError
from .storage import DataFormatError, format_exponent, parse_exponent

log = logging.getLogger("nslab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _exponent(text: str) -> float:
    try:
        return parse_exponent(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or ratio: {text!r}") from None


def cmd_simulate(args) -> int:
    config = storage.load_config(args.config)
    man = storage.run(config, args.out)
    print(f"wrote {len(man.artifacts) - 2} snapshots to {args.out}")
    return EXIT_OK


def cmd_shells(args) -> int:
    s_values = args.s or [2.0]
    group = storage.series_from_snapshots(args.input, s_values)
    storage.save_series(group, args.out)
    storage.write_artifact_manifest("shells", args.out, {"s": [format_exponent(s) for s in s_values]},
                                    [args.input])
    print(f"wrote {len(group[0].times)} times x {len(group[0].shells)} shells x {len(s_values)} exponents")
    return EXIT_OK


def cmd_criterion(args) -> int:
    try:
        params = CriterionParams(args.r, args.s, args.alpha, args.delta, (args.pmin, args.pmax), args.tail)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    series = storage.load_series(args.series, args.s)
    t0_grid = None
    if args.t0_step:
        start = series.times[0] + 2.0 ** (-2 * args.pmin)
        t0_grid = np.arange(start, series.times[-1] + 1e-12, args.t0_step)
    report = detect_bad_points(series, params, t0_grid)
    storage.save_criterion_report(report, args.out)
    storage.write_artifact_manifest("criterion", args.out, {
        "r": format_exponent(args.r), "s": format_exponent(args.s), "alpha": args.alpha,
        "delta": args.delta, "pmin": args.pmin, "pmax": args.pmax, "tail": args.tail,
        "notes": report.notes}, [args.series])
    print(f"bad times: {len(report.bad_times)} of {len(report.t0_grid)}; max tail Lambda = {report.summary:.6g}")
    return EXIT_OK


def cmd_cover(args) -> int:
    tail = args.tail
    man_path = storage.manifest_path(args.report)
    if tail is None and man_path.exists():
        tail = int(storage.RunManifest.load(man_path, verify=True).config.get("tail", 3))
    report = storage.load_criterion_report(args.report, tail or 3)
    try:
        d_grid = parse_d_grid(args.d_grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trend = premeasure_trend(report, d_grid)
    storage.save_premeasure(trend, args.out)
    config = {"d_grid": args.d_grid, "convention": args.convention, "tail": tail or 3,
              "floors": trend.floors, "counts": trend.counts,
              "bracket": list(trend.bracket), "notes": trend.notes}
    if args.r is not None and args.s is not None:
        d = dimension_exponent(args.r, args.s, args.alpha, args.convention)
        config["predicted_exponent"] = float(d)
    storage.write_artifact_manifest("cover", args.out, config, [args.report])
    print(f"floors {trend.floors}, cover sizes {trend.counts}, dimension bracket {trend.bracket}")
    return EXIT_OK


def cmd_verify(args) -> int:
    check = args.check
    if check == "partition-of-unity":
        result = checks.partition_of_unity(args.n, args.trials, args.seed)
    elif check == "bernstein":
        result = checks.bernstein(args.n, args.trials, args.seed)
    elif check == "decomposition-exactness":
        result = checks.decomposition_exactness(args.n, args.trials, args.s or (2.0, 10 / 3, 4.0), args.seed)
    elif check == "energy":
        if not args.trajectory:
            raise UsageError("--check energy needs --trajectory <run dir>")
        result = checks.energy(storage.load_ledger(Path(args.trajectory) / "energy.csv"))
    else:
        if not args.trajectory:
            raise UsageError("--check shell-inequality needs --trajectory <run dir>")
        s = args.s[0] if args.s else 10 / 3
        result, report = checks.shell_inequality(storage.iter_snapshots(args.trajectory), s)
        if args.out:
            storage.save_shell_inequality(report, args.out)
            c = report.constants
            storage.save_key_values([("s", format_exponent(s)), ("c_visc", c.c_visc), ("c_rhs", c.c_rhs)],
                                    Path(args.out).with_suffix(".constants.csv"))
    print(result.line())
    return EXIT_OK if result.passed else EXIT_FAIL


def _read_premeasure(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["d", "floor", "count", "premeasure"]:
            raise DataFormatError(f"{path}: header must be d,floor,count,premeasure")
        data = []
        for lineno, row in enumerate(reader, start=2):
            try:
                d, p, c, v = row
                data.append((float(d), int(p), int(c), float(v)))
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: malformed row {row!r}") from None
    return data


def cmd_report(args) -> int:
    rows = [("r", format_exponent(args.r)), ("s", format_exponent(args.s)), ("delta", args.delta)]
    if args.criterion:
        rep = storage.load_criterion_report(args.criterion, args.tail)
        rows += [("t0_count", len(rep.t0_grid)), ("bad_count", len(rep.bad_times)),
                 ("bad_times", ";".join(storage.format_float(t) for t in rep.bad_times)),
                 ("tail_lambda_max", rep.summary)]
    if args.premeasure:
        data = _read_premeasure(args.premeasure)
        if data:
            top = max(p for _, p, _, _ in data)
            rows.append(("premeasure_floor", top))
            rows += [(f"premeasure_d={storage.format_short(d)}", v) for d, p, _, v in data if p == top]
    C = None
    if args.constants:
        kv = storage.load_key_values(args.constants)
        C = float(kv.get("c_rhs", "nan"))
        rows += [("c_visc", float(kv.get("c_visc", "nan"))), ("c_rhs", C)]
    chain = admissible_delta(args.r, args.s, C if C is not None and math.isfinite(C) else math.nan)
    rows += [("M", chain["M"]), ("C", chain["C"]), ("delta_admissible", chain["delta_admissible"])]
    if math.isfinite(chain["delta_admissible"]):
        rows.append(("delta_consistent", int(args.delta <= chain["delta_admissible"])))
    storage.save_key_values(rows, args.out)
    inputs = [p for p in (args.criterion, args.premeasure, args.constants) if p]
    storage.write_artifact_manifest("report", args.out, {"tail": args.tail}, inputs)
    print(f"M = {chain['M']:.6g}, delta_admissible = {chain['delta_admissible']:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nslab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a configured run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("shells", help="block norms of every snapshot in a run directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--s", type=_exponent, action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shells)

    p = sub.add_parser("criterion", help="scan Lambda_p(t0) on a series")
    p.add_argument("--series", required=True)
    p.add_argument("--r", type=_exponent, default=10 / 3)
    p.add_argument("--s", type=_exponent, default=10 / 3)
    p.add_argument("--alpha", type=_exponent, default=0.0)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--pmin", type=int, default=2)
    p.add_argument("--pmax", type=int, default=6)
    p.add_argument("--tail", type=int, default=3)
    p.add_argument("--t0-step", type=float, default=None,
                   help="scan a uniform t0 grid instead of the stored sample times")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_criterion)

    p = sub.add_parser("cover", help="Vitali covers and premeasure trend of a criterion report")
    p.add_argument("--report", required=True)
    p.add_argument("--d-grid", default="0.1:1.0:0.1")
    p.add_argument("--convention", choices=("lemma", "theorem"), default="lemma")
    p.add_argument("--tail", type=int, default=None)
    p.add_argument("--r", type=_exponent, default=None)
    p.add_argument("--s", type=_exponent, default=None)
    p.add_argument("--alpha", type=_exponent, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cover)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--check", required=True, choices=(
        "partition-of-unity", "bernstein", "energy", "shell-inequality", "decomposition-exactness"))
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectory", default=None)
    p.add_argument("--s", type=_exponent, action="append")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="merge tables and evaluate the delta consistency chain")
    p.add_argument("--criterion")
    p.add_argument("--premeasure")
    p.add_argument("--constants")
    p.add_argument("--r", type=_exponent, default=10 / 3)
    p.add_argument("--s", type=_exponent, default=10 / 3)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--tail", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CoverageError, ResolutionError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
