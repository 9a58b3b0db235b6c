"""``interbench`` command line: run, validate, report, list.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from interbench import pipeline, registry

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging():
    level = os.environ.get("INTERBENCH_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if level not in LOG_LEVELS:
        logging.getLogger("interbench").error("INTERBENCH_LOG=%s not in %s; using error", level, sorted(LOG_LEVELS))


def _err(msg: str):
    print(msg, file=sys.stderr)


def _print_violations(violations, source):
    for path, msg in violations:
        _err(f"{source}: {path}: {msg}")


def _load(path) -> pipeline.ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise pipeline.ConfigError([("$", f"config file not found: {p}")])
    return pipeline.ExperimentConfig.from_file(p)


def cmd_run(args) -> int:
    try:
        config = _load(args.config)
    except pipeline.ConfigError as exc:
        _print_violations(exc.violations, args.config)
        return EXIT_CONFIG
    if args.seed_override is not None:
        config = config.with_seeds([args.seed_override])
    if args.jobs < 1:
        _err("--jobs must be at least 1")
        return EXIT_CONFIG
    out = args.out or config.raw.get("output") or "."
    try:
        report = pipeline.run_experiment(config, jobs=args.jobs)
        paths = pipeline.emit_report(report, out, formats=("json", "csv", "plotdata"))
    except Exception as exc:
        logging.getLogger("interbench").debug("run failed", exc_info=True)
        _err(f"run failed: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    for fmt in sorted(paths):
        logging.getLogger("interbench").info("wrote %s", paths[fmt])
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        _load(args.config)
    except pipeline.ConfigError as exc:
        _print_violations(exc.violations, args.config)
        return EXIT_CONFIG
    return EXIT_OK


def _cell(agg: dict | None) -> str:
    if agg is None:
        return "-"
    return f"{agg['mean']:.4f} ± {agg['stderr']:.4f}"


def _table_rows(report: dict, metric: str | None):
    """(label, cell) pairs; metrics seen only as null values render as '-'."""
    def names_for(aggregate, records):
        names = set(aggregate)
        for r in records:
            names.update(f"{r['model']}.{k}" for k in r["metrics"])
        return sorted(n for n in names if metric is None or n == metric or n.split(".", 1)[1] == metric)

    sweep = report.get("sweep")
    if not sweep:
        agg = report["aggregate"]
        return [(n, _cell(agg.get(n))) for n in names_for(agg, report["per_seed"])]
    rows = []
    for p in sweep["points"]:
        recs = [r for r in report["per_seed"] if r.get("sweep_value") == p["value"]]
        for n in names_for(p["aggregate"], recs):
            rows.append((f"{n} [{sweep['param']}={p['value']}]", _cell(p["aggregate"].get(n))))
    return rows


def render_table(report: dict, metric: str | None = None) -> str:
    rows = _table_rows(report, metric)
    if not rows:
        return ""
    width = max(len(label) for label, _ in rows)
    return "".join(f"{label.ljust(width)}  {cell}\n" for label, cell in rows)


def cmd_report(args) -> int:
    path = Path(args.input)
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        _err(f"cannot read report {path}: {exc.strerror or exc}")
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        _err(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")
        return EXIT_CONFIG
    problems = pipeline.report_errors(report)
    if problems:
        _print_violations(problems, path)
        return EXIT_CONFIG
    if args.format == "table":
        text = render_table(report, args.metric)
    elif args.format == "csv":
        text = pipeline.report_csv(report)
    else:
        if "sweep" not in report:
            _err(f"{path}: plotdata needs a report with a parameter sweep")
            return EXIT_CONFIG
        text = pipeline.plot_csv(report, args.metric)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_list(args) -> int:
    sys.stdout.write("".join(line + "\n" for line in registry.listing()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="interbench", description="Defense/risk interaction experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run an experiment config and write report files")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--out", metavar="DIR", help="output directory (default: config 'output' or .)")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel seed workers")
    p.add_argument("--seed-override", type=int, metavar="S", help="run only seed S")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config without training")
    p.add_argument("--config", required=True, metavar="PATH")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render a report JSON")
    p.add_argument("--in", dest="input", required=True, metavar="REPORT")
    p.add_argument("--format", choices=("table", "csv", "plotdata"), default="table")
    p.add_argument("--metric", help="restrict to one aggregate name")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("list", help="list registered risks, attacks, defenses and metrics")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
