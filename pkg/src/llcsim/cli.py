"""Command-line entry point: ``llcsim run|sweep|list-builtins``.

Exit codes: 0 success, 2 configuration or validation error, 3 runtime
assertion (a simulation invariant or counter reconciliation failed).
"""

import argparse
import os
import sys
import warnings

from llcsim.builtins import BUILTINS, get_builtin
from llcsim.cache_model import ConfigError
from llcsim.engine import run as run_scenario
from llcsim.io_path import SimulationError
from llcsim.report import csv_text, write_actions
from llcsim.scenario import parse_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SUMMARY_METRICS = ("llc_hit_rate", "llc_miss_rate", "mlc_miss_rate", "dca_leak_rate",
                   "io_throughput", "latency_proxy", "mem_bw_lines")


def _load(source, variant=None):
    """Scenario text plus builtin overrides for a file path or builtin name."""
    if source in BUILTINS:
        b = get_builtin(source)
        ovs = b.variant(variant) if variant else ()
        return b.text.lstrip(), tuple(ovs)
    if variant:
        raise ConfigError("--variant only applies to builtin scenarios")
    try:
        with open(source) as f:
            return f.read(), ()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {source!r}: {exc.strerror}") from None


def _overrides(args):
    ovs = list(args.set or ())
    if args.seed is not None:
        ovs.append(f"sim.seed={args.seed}")
    if args.no_controller:
        ovs.append("sim.controller=off")
    return ovs


def _build(text, overrides, lenient):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sc = parse_scenario(text, lenient=lenient, overrides=overrides)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return sc


def _write(path, text):
    try:
        with open(path, "w", newline="") as f:
            f.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from None


def _prepare_out(directory):
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {directory}: {exc.strerror}") from None


def _with_ticks(text, overrides, lenient, ticks):
    """Parse with ``sim.total_ticks`` replaced, shortening warm-up if needed."""
    sc = _build(text, overrides, lenient)
    ovs = list(overrides) + [f"sim.total_ticks={ticks}"]
    if ticks >= 1 and sc.warmup_ticks >= ticks:
        ovs.append(f"sim.warmup_ticks={ticks - 1}")
        print(f"note: warmup_ticks reduced to {ticks - 1}", file=sys.stderr)
    return _build(text, ovs, lenient)


def _print_summary(report, stream=None):
    stream = stream or sys.stdout
    entities = []
    for (entity, _), _v in report.summary.items():
        if entity not in entities:
            entities.append(entity)
    for entity in entities:
        parts = []
        for m in SUMMARY_METRICS:
            v = report.summary.get((entity, m))
            if v is not None:
                parts.append(f"{m}={v:.4f}" if isinstance(v, float) else f"{m}={v}")
        print(f"{entity}: " + " ".join(parts), file=stream)


def cmd_run(args):
    text, base_ovs = _load(args.scenario, args.variant)
    ovs = list(base_ovs) + _overrides(args)
    if args.ticks is None:
        sc = _build(text, ovs, args.lenient)
    else:
        sc = _with_ticks(text, ovs, args.lenient, args.ticks)
    _prepare_out(args.out)
    report = run_scenario(sc)
    _write(os.path.join(args.out, "report.csv"), csv_text(report))
    write_actions(report.actions, os.path.join(args.out, "actions.csv"))
    _print_summary(report)
    return EXIT_OK


def cmd_sweep(args):
    b = get_builtin(args.builtin)
    variants = b.variants or (("base", ()),)
    _prepare_out(args.out)
    lines = ["variant,entity,metric,value"]
    for label, ovs in variants:
        sc = _build(b.text.lstrip(), list(ovs) + list(args.set or ()), args.lenient)
        report = run_scenario(sc)
        _write(os.path.join(args.out, f"{label}.csv"), csv_text(report))
        write_actions(report.actions, os.path.join(args.out, f"{label}.actions.csv"))
        for (entity, metric), v in report.summary.items():
            lines.append(f"{label},{entity},{metric},{v:.6f}")
        print(f"{label}: done", file=sys.stderr)
    _write(os.path.join(args.out, "summary.csv"), "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_list(args):
    for b in BUILTINS.values():
        labels = ", ".join(label for label, _ in b.variants)
        print(f"{b.name}: {b.description}" + (f" [variants: {labels}]" if labels else ""))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="llcsim", description="LLC / DCA contention simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario file or builtin")
    r.add_argument("scenario", help="scenario file path or builtin name")
    r.add_argument("--variant", help="named variant of a builtin")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default=".", help="output directory (default: .)")
    r.add_argument("--ticks", type=int, help="override sim.total_ticks")
    r.add_argument("--no-controller", action="store_true")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a scenario value; repeatable")
    r.add_argument("--lenient", action="store_true", help="warn on unknown keys instead of failing")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every variant of a builtin")
    s.add_argument("builtin")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--lenient", action="store_true")
    s.set_defaults(func=cmd_sweep)

    ls = sub.add_parser("list-builtins", help="list builtin scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
