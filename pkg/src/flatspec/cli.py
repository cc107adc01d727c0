"""Command line interface.

Descriptors travel as JSON objects {"class": name, "params": {...}}; numeric
tables travel as CSV with %.17g formatting so round-trips are lossless.

Exit codes: 0 success, 1 usage, 2 invalid descriptor or unparseable input,
3 I/O failure, 4 enumeration cap exceeded, 10 compare found a spectral
difference, 11 reconstruction failed (or contradicted the class hint).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from .geometry import (
    CLASS_NAMES,
    ValidationError,
    as_dict,
    canonical_form,
    covering_info,
    default_params,
    descriptor,
    from_dict,
    holonomy_order,
    is_orientable,
    volume,
)
from .heat_trace import default_time_grid, trace_grid
from .inverse import ReconstructionError, reconstruct
from .isospec import isospectral, m4_m6_pair, search_pairs
from .lattice import EnumerationCapError
from .oracle import spectrum

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_CAP = 4
EXIT_DISTINGUISHED = 10
EXIT_NO_RECONSTRUCTION = 11


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_descriptor(arg: str):
    """Descriptor from inline JSON (starts with '{') or from a file path."""
    raw = arg if arg.lstrip().startswith("{") else _read_text(arg)
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"descriptor is not valid JSON: {exc}") from exc
    return from_dict(obj)


def _emit_json(obj, out: str | None) -> None:
    _write_text(out, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _parse_times(args, d):
    if args.times:
        try:
            times = sorted(float(x) for x in args.times.split(","))
        except ValueError as exc:
            raise ValidationError(f"bad --times list: {exc}") from exc
        if not times or times[0] <= 0:
            raise ValidationError("--times must be positive numbers")
        return np.array(times)
    if args.t_min is not None or args.t_max is not None:
        lo = args.t_min if args.t_min is not None else 1e-4
        hi = args.t_max if args.t_max is not None else 10.0
        if not (0 < lo <= hi):
            raise ValidationError("need 0 < t-min <= t-max")
        return np.geomspace(lo, hi, args.points)
    return default_time_grid(d, args.points)


def cmd_validate(args) -> int:
    d = _load_descriptor(args.descriptor)
    info = {
        "valid": True,
        "class": d.class_name,
        "volume": volume(d),
        "orientable": is_orientable(d),
        "holonomy_order": holonomy_order(d),
        "canonical": as_dict(canonical_form(d)),
    }
    _emit_json(info, args.output)
    return EXIT_OK


def cmd_trace(args) -> int:
    d = _load_descriptor(args.descriptor)
    times = _parse_times(args, d)
    samples = trace_grid(d, times, eps=args.eps)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "trace", "err"])
    for t, v, e in zip(samples.t, samples.value, samples.err):
        writer.writerow([_fmt(t), _fmt(v), _fmt(e)])
    _write_text(args.output, buf.getvalue())
    return EXIT_OK


def cmd_spectrum(args) -> int:
    d = _load_descriptor(args.descriptor)
    if args.lambda_max < 0:
        raise ValidationError("--lambda-max must be nonnegative")
    s = spectrum(d, args.lambda_max)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "multiplicity"])
    for lam, mult in zip(s.eigenvalues, s.multiplicities):
        writer.writerow([_fmt(lam), str(int(mult))])
    _write_text(args.output, buf.getvalue())
    return EXIT_OK


def cmd_compare(args) -> int:
    d1 = _load_descriptor(args.first)
    d2 = _load_descriptor(args.second)
    times = None
    if args.times:
        try:
            times = np.array(sorted(float(x) for x in args.times.split(",")))
        except ValueError as exc:
            raise ValidationError(f"bad --times list: {exc}") from exc
    verdict = isospectral(d1, d2, times=times, tol=args.tol)
    if verdict.distinguished:
        line = f"DISTINGUISHED t={_fmt(verdict.first_t)} gap={_fmt(verdict.max_gap)}"
    else:
        line = f"ISOSPECTRAL max_gap={_fmt(verdict.max_gap)}"
    sys.stdout.write(line + "\n")
    if args.output not in (None, "-"):
        _emit_json(
            {
                "distinguished": verdict.distinguished,
                "max_gap": verdict.max_gap,
                "first_t": verdict.first_t,
                "tol": verdict.tol,
                "grid_points": int(verdict.grid.size),
            },
            args.output,
        )
    return EXIT_DISTINGUISHED if verdict.distinguished else EXIT_OK


def _read_samples(path: str):
    text = _read_text(path)
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or not row[0].strip():
            continue
        try:
            vals = [float(x) for x in row[: 3]]
        except ValueError:
            continue  # header or comment line
        if len(vals) < 2:
            raise ValidationError("samples need at least t and trace columns")
        t, y = vals[0], vals[1]
        err = vals[2] if len(vals) > 2 else 0.0
        rows.append((t, y, err))
    rows.sort()
    return rows


def cmd_reconstruct(args) -> int:
    rows = _read_samples(args.samples)
    if len(rows) < 8:
        sys.stderr.write("reconstruction failed: insufficient samples\n")
        return EXIT_NO_RECONSTRUCTION
    t, y, err = (np.array(col) for col in zip(*rows))
    try:
        d = reconstruct((t, y, err), hint=args.class_hint)
    except ReconstructionError as exc:
        sys.stderr.write(f"reconstruction failed: {exc}\n")
        return EXIT_NO_RECONSTRUCTION
    _emit_json(as_dict(d), args.output)
    return EXIT_OK


def cmd_pair(args) -> int:
    a, b = m4_m6_pair(args.scale)
    _emit_json({"first": as_dict(a), "second": as_dict(b)}, args.output)
    return EXIT_OK


def cmd_search(args) -> int:
    hits = search_pairs(
        args.first, args.second,
        low=args.low, high=args.high, step=args.step, tol=args.tol,
    )
    _emit_json(
        {
            "pairs": [{"first": as_dict(a), "second": as_dict(b)} for a, b in hits],
            "count": len(hits),
        },
        args.output,
    )
    return EXIT_OK


def cmd_covering(args) -> int:
    info = covering_info(args.manifold_class)
    _emit_json(
        {
            "class": args.manifold_class,
            "torus_fold": info["torus_fold"],
            "covered_by": [
                {"cover": e.cover_class, "quotient": e.quotient_class, "folds": e.folds}
                for e in info["covered_by"]
            ],
            "covers": [
                {"cover": e.cover_class, "quotient": e.quotient_class, "folds": e.folds}
                for e in info["covers"]
            ],
        },
        args.output,
    )
    return EXIT_OK


def cmd_defaults(args) -> int:
    d = descriptor(args.manifold_class, **default_params(args.manifold_class))
    _emit_json(as_dict(d), args.output)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError("must be positive and finite")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="flatspec",
        description="Heat traces, spectra and inverse reconstruction "
        "of the ten closed flat 3-manifolds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_output(p):
        p.add_argument("-o", "--output", default=None, help="output file ('-' = stdout)")

    p = sub.add_parser("validate", help="check a descriptor and print its summary")
    p.add_argument("descriptor", help="descriptor JSON file, '-' or inline JSON")
    add_output(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("trace", help="evaluate the heat trace on a time grid (CSV)")
    p.add_argument("descriptor")
    p.add_argument("--times", help="comma-separated times (overrides the grid options)")
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--points", type=_positive_int, default=60)
    p.add_argument("--eps", type=float, default=1e-12, help="certified truncation budget")
    add_output(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("spectrum", help="list eigenvalues up to a cutoff (CSV)")
    p.add_argument("descriptor")
    p.add_argument("--lambda-max", type=float, required=True)
    add_output(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("compare", help="test two descriptors for isospectrality")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--times", help="comma-separated comparison times")
    add_output(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reconstruct", help="recover a descriptor from trace samples")
    p.add_argument("samples", help="CSV of t,trace[,err] rows ('-' = stdin)")
    p.add_argument("--class", dest="class_hint", default=None, choices=CLASS_NAMES,
                   help="only consider this manifold class")
    add_output(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("pair", help="print the isospectral non-homeomorphic pair")
    p.add_argument("--scale", type=_positive_float, default=1.0)
    add_output(p)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("search", help="grid-search a class pair for isospectral pairs")
    p.add_argument("first", choices=CLASS_NAMES)
    p.add_argument("second", choices=CLASS_NAMES)
    p.add_argument("--low", type=float, default=0.5)
    p.add_argument("--high", type=float, default=2.0)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--tol", type=float, default=1e-11)
    add_output(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("covering", help="show direct covering relations of a class")
    p.add_argument("manifold_class", choices=CLASS_NAMES)
    add_output(p)
    p.set_defaults(func=cmd_covering)

    p = sub.add_parser("defaults", help="print a template descriptor for a class")
    p.add_argument("manifold_class", choices=CLASS_NAMES)
    add_output(p)
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except EnumerationCapError as exc:
        sys.stderr.write(f"evaluation too large: {exc}\n")
        return EXIT_CAP
    except (ValidationError, ValueError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
