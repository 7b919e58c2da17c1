"""Command-line interface.

::

    tailcluster run <config>            run every stage, reusing valid caches
    tailcluster stage <name> <config>   run one stage on cached upstream artifacts
    tailcluster validate <config>       check the config and the price file
    tailcluster report <artifact-dir>   summarize a finished run

Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric or fit error,
4 dependency error.
"""

import argparse
import json
import logging
import os
import sys

from . import config as config_mod
from .errors import ConfigError, DataError, TailClusterError
from .ingest import load_prices, split_train_test, to_log_returns
from .pipeline import STAGES, Pipeline, report

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="tailcluster", description="Tail-dependence clustering and portfolio backtest.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("config")
    p.add_argument("--force", action="store_true", help="ignore cached stages")

    p = sub.add_parser("stage", help="run a single stage")
    p.add_argument("name", choices=STAGES)
    p.add_argument("config")

    p = sub.add_parser("validate", help="validate a config and its price file")
    p.add_argument("config")

    p = sub.add_parser("report", help="summarize an artifact directory")
    p.add_argument("artifact_dir")
    p.add_argument("--json", action="store_true", help="print the raw summary as JSON")
    return parser


def _validate(cfg):
    if not os.path.isfile(cfg.data_path):
        raise DataError(f"price file not found: {cfg.data_path}")
    panel = load_prices(cfg.data_path, cfg.prices.format_spec())
    train, test = split_train_test(to_log_returns(panel), cfg.split.test_start)
    print(f"config ok: {len(panel.tickers)} assets, {train.T} train and {test.T} test returns")
    print(f"ensemble size {cfg.ensemble.size}, copula families {', '.join(cfg.copula_families())}")


def _print_report(summary):
    print(f"artifacts: {summary['root']}")
    for name, done in summary.get("stages", {}).items():
        print(f"  {name:<10} {'done' if done else 'missing'}")
    if "failed" in summary:
        f = summary["failed"]
        print(f"FAILED at stage {f['stage']}: {f['error']}: {f['message']}")
    if "consensus" in summary:
        c = summary["consensus"]
        print(f"consensus: {c['ensemble_size']} partitions, {c['linkage']} linkage, {c['cut']} cut, k={c['k']}")
        print(f"  ARI vs {c['alternate_linkage']} linkage: {c['ari_between_linkages']:.4f}")
        for i, members in enumerate(summary["clusters"]):
            print(f"  cluster {i}: {' '.join(members)}")
    if "reports" in summary:
        print(f"{'strategy':<28}{'mu':>9}{'sigma':>9}{'cvar':>9}{'mdd':>9}{'ce':>9}")
        for r in summary["reports"]:
            print(f"{r['strategy']:<28}" + "".join(f"{r[k]:>9.4f}" for k in ("mu", "sigma", "cvar", "mdd", "ce")))


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = None
    try:
        if args.command == "report":
            if not os.path.isdir(args.artifact_dir):
                raise DataError(f"artifact directory not found: {args.artifact_dir}")
            summary = report(args.artifact_dir)
            if args.json:
                print(json.dumps(summary, indent=2, sort_keys=True))
            else:
                _print_report(summary)
            return EXIT_OK
        cfg = config_mod.load(args.config)
        if args.command == "validate":
            _validate(cfg)
            return EXIT_OK
        pipe = Pipeline(cfg)
        if args.command == "run":
            pipe.run(force=args.force)
        else:
            stage = args.name
            pipe.run_stage(args.name)
        print(f"artifacts written to {cfg.output_dir}")
        return EXIT_OK
    except TailClusterError as exc:
        _report_error(exc, stage)
        return exc.exit_code
    except Exception as exc:  # a bug or an unmapped numerical failure inside a stage
        _report_error(exc, stage)
        return EXIT_INTERNAL


def _report_error(exc, stage):
    tag = getattr(exc, "stage", None) or stage
    prefix = f"[{tag}] " if tag else ""
    print(f"error: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
