"""Command-line entry point: ``lipgan run|validate|field|report``.

Exit codes: 0 success, 1 invalid spec or arguments, 2 training diverged,
3 an oracle check failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import nn
from .fields import export_gradient_field, write_field_csv, write_field_svg
from .runner import (
    EXIT_CHECK_FAILED,
    EXIT_INVALID,
    EXIT_OK,
    collect_report,
    run_many,
    write_report,
)
from .spec import SpecError, load_spec


def _load_all(paths) -> list:
    specs, errors = [], []
    for p in paths:
        try:
            specs.append(load_spec(p))
        except SpecError as exc:
            errors.extend(exc.format_lines())
    if errors:
        for line in errors:
            print(line, file=sys.stderr)
        return []
    return specs


def cmd_validate(args) -> int:
    specs = _load_all(args.specs)
    if not specs:
        return EXIT_INVALID
    for s in specs:
        print(f"ok: {s.name} ({s.scenario}, seed {s.seed}, checks: {', '.join(s.checks) or 'none'})")
    return EXIT_OK


def cmd_run(args) -> int:
    specs = _load_all(args.specs)
    if not specs:
        return EXIT_INVALID
    outcomes = run_many(specs, root=args.output_root, jobs=args.jobs)
    for o in outcomes:
        checks = o.summary.get("checks", {})
        flags = " ".join(f"{k}={'pass' if v['passed'] else 'FAIL'}" for k, v in checks.items())
        print(f"{o.spec_name}: {o.summary.get('status')} -> {o.out_dir} {flags}".rstrip())
    return max(o.exit_code for o in outcomes)


def _box(text: str) -> tuple[float, float, float, float]:
    parts = [float(v) for v in text.replace(",", " ").split()]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("box needs four numbers: x1min x1max x2min x2max")
    return tuple(parts)


def cmd_field(args) -> int:
    try:
        params = nn.load_checkpoint(args.checkpoint)
        rows = export_gradient_field(nn.critic(params), args.box, args.res)
    except (OSError, ValueError, KeyError) as exc:
        print(f"{args.checkpoint}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("field.csv")
    write_field_csv(rows, out)
    if args.svg:
        write_field_svg(rows, out.with_suffix(".svg"))
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        rows = collect_report(args.dirs)
    except (OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_report(rows, fh)
    else:
        write_report(rows, sys.stdout)
    failed = any(r.get("passed") is False for r in rows)
    return EXIT_CHECK_FAILED if failed and args.strict else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipgan", description="Lipschitz-constrained critic experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one or more spec files")
    r.add_argument("specs", nargs="+")
    r.add_argument("--output-root", default=None, help="overrides spec output_dir and LIPGAN_OUTPUT_ROOT")
    r.add_argument("--jobs", type=int, default=1, help="run independent specs in parallel")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse and check spec files without training")
    v.add_argument("specs", nargs="+")
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("field", help="export the gradient field of a 2-D critic checkpoint")
    f.add_argument("checkpoint")
    f.add_argument("--box", type=_box, default=(-1.5, 1.5, -1.5, 1.5), metavar="'X0 X1 Y0 Y1'")
    f.add_argument("--res", type=int, default=21)
    f.add_argument("--out", default=None, help="CSV path (default: field.csv next to the checkpoint)")
    f.add_argument("--svg", action="store_true", help="also write an SVG arrow plot")
    f.set_defaults(func=cmd_field)

    rep = sub.add_parser("report", help="aggregate summary.json files into one CSV")
    rep.add_argument("dirs", nargs="+")
    rep.add_argument("--out", default=None)
    rep.add_argument("--strict", action="store_true", help="exit 3 if any run failed its checks")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; keep 2 for divergence
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
