"""``graphfuse`` command line.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .datasets import TABLE1, DatasetError, load_dataset
from .experiments import ConfigError, ReportError, RunSpec, report, run
from .spectral import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_spec(args) -> RunSpec:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
    if args.dataset:
        raw["dataset"] = args.dataset
    if args.method:
        raw["method"] = args.method
    if args.seeds is not None:
        raw["seeds"] = args.seeds
    if args.fractions is not None:
        raw["robustness_fractions"] = args.fractions
    if args.out:
        raw["out"] = args.out
    if args.loss_mode:
        fusion = dict(raw.get("fusion") or {})
        fusion["loss_mode"] = args.loss_mode
        raw["fusion"] = fusion
    return RunSpec.from_dict(raw).validate()


def cmd_run(args) -> int:
    spec = build_spec(args)
    records = run(spec)
    for rec in records:
        frac = "-" if rec.fraction is None else f"{rec.fraction:g}"
        print(f"{rec.dataset} {rec.method} seed={rec.seed} fraction={frac} acc={rec.test_accuracy:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    table, _ = report(args.inp, args.csv)
    print(table)
    return EXIT_OK


def cmd_convert_check(args) -> int:
    ds = load_dataset(args.dataset)
    print(f"{ds.name}: n={ds.n} d={ds.d} c={ds.c} edges={ds.graphs['view1'].num_edges} "
          f"train={len(ds.splits['train'])} val={len(ds.splits['val'])} test={len(ds.splits['test'])}")
    expected = TABLE1.get(ds.name.lower())
    if expected and expected != (ds.n, ds.d, ds.c):
        print(f"warning: expected (n, d, c) = {expected}", file=sys.stderr)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and append JSON-lines records")
    p.add_argument("--config", help="JSON file mirroring RunSpec")
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p.add_argument("--method", help="gcn_view1, gcn_view2, gcn_multiview, sf, pf or spf")
    p.add_argument("--seeds", "--seed-list", dest="seeds", type=_ints, help="comma-separated seeds")
    p.add_argument("--fractions", type=_floats, help="comma-separated robustness fractions")
    p.add_argument("--loss-mode", choices=["full", "commonality_only"])
    p.add_argument("--out", help="JSON-lines output path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize a JSON-lines results file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--csv", help="also write the summary as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("convert-check", help="validate a dataset directory")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_convert_check)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ReportError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
