"""Command-line scenario runner: ``run``, ``sweep`` and ``report``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analysis import (DEFAULT_OUTLIER_BOUND_PS, OffsetTrace, TraceFormatError,
                       accuracy_precision, density_overlays, histogram, render_report,
                       sigma_table)
from .scenario import (SWEEPABLE, ConfigError, Scenario, apply_sweep_value, load_scenario,
                       simulate)
from .simcore import PS_PER_US, derive_seed

logger = logging.getLogger("rbis5g")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SYNCLOG_COLUMNS = ("round", "true_time_ps", "sfn", "raw_delta_ps", "runtime_term_ps",
                   "applied_delta_ps", "true_offset_after_ps", "match_failures")
SUMMARY_COLUMNS = ("protocol", "slave", "samples", "accuracy_ps", "precision_ps",
                   "outlier_count", "accuracy_us", "precision_us")


class RuntimeFailure(RuntimeError):
    pass


def analysis_artifacts(trace: OffsetTrace, label: str,
                       outlier_bound_ps: int = DEFAULT_OUTLIER_BOUND_PS,
                       bin_width_ps: int = 500_000) -> dict[str, str]:
    """Report, sigma table, histogram and density CSVs for one trace, keyed by file suffix."""
    try:
        report = sigma_table(trace, outlier_bound_ps)
        overlays = density_overlays(trace, outlier_bound_ps)
    except ValueError as exc:
        # e.g. every sample beyond the outlier bound; keep the run's other artifacts
        return {"report.txt": f"trace = {label}\nsamples_full = {len(trace)}\n"
                              f"analysis_error = {exc}\n"}
    return {
        "report.txt": render_report(report, overlays, label),
        "sigma.csv": report.to_csv(),
        "histogram.csv": histogram(trace, bin_width_ps, outlier_bound_ps).to_csv(),
        "density.csv": overlays.to_csv(),
    }


def _summary_row(protocol: str, slave: str, trace: OffsetTrace, bound: int) -> list:
    """Accuracy and precision of the reduced trace, or of the full one if nothing survives."""
    try:
        report = sigma_table(trace, bound)
        mean, std, n_out = report.mean, report.std, report.outlier_count
    except ValueError:
        if len(trace) < 2:
            return [protocol, slave, len(trace), "", "", "", "", ""]
        mean, std = accuracy_precision(trace)
        n_out = len(trace)
    return [protocol, slave, len(trace), f"{mean:.3f}", f"{std:.3f}", n_out,
            f"{mean / PS_PER_US:.4f}", f"{std / PS_PER_US:.4f}"]


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _prepare_out(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise ConfigError(f"output directory {out} exists and is not empty "
                              "(use --overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def manifest_text(scenario: Scenario) -> str:
    return (f"# rbis5g {__version__}\n# seed {scenario.seed}\n"
            + scenario.to_config_text())


def execute(scenario: Scenario, out: Path) -> list[list]:
    """Simulate ``scenario`` and write every artifact into ``out``; returns summary rows."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(manifest_text(scenario))
    log_file = open(out / "events.tsv", "w") if scenario.event_log else None
    try:
        runs = simulate(scenario, log_file)
    finally:
        if log_file is not None:
            log_file.close()
    rows = []
    for proto, run in runs.items():
        for name, slave in run.slaves.items():
            prefix = f"{proto}_{name}"
            trace = slave.trace
            trace.metadata["outlier_bound_ps"] = str(scenario.outlier_bound_ps)
            trace.metadata["bin_width_ps"] = str(scenario.bin_width_ps)
            trace.save(out / f"{prefix}_trace.csv")
            if proto == "rbis":
                (out / f"{prefix}_synclog.csv").write_text(_csv(
                    ([getattr(r, c) for c in SYNCLOG_COLUMNS] for r in slave.records),
                    SYNCLOG_COLUMNS))
            for suffix, text in analysis_artifacts(trace, prefix, scenario.outlier_bound_ps,
                                                   scenario.bin_width_ps).items():
                (out / f"{prefix}_{suffix}").write_text(text)
            rows.append(_summary_row(proto, name, trace, scenario.outlier_bound_ps))
    (out / "summary.csv").write_text(_csv(rows, SUMMARY_COLUMNS))
    return rows


def _load(args) -> Scenario:
    scenario = load_scenario(args.config)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    return scenario


def cmd_run(args) -> int:
    scenario = _load(args)
    out = Path(args.out)
    _prepare_out(out, args.overwrite)
    rows = execute(scenario, out)
    for row in rows:
        logger.info("%s %s: accuracy %s us, precision %s us, outliers %s",
                    row[0], row[1], row[6], row[7], row[5])
    return EXIT_OK


def _parse_values(parameter: str, raw: str) -> list:
    items = [v.strip() for v in raw.split(",") if v.strip()]
    if not items:
        raise ConfigError("sweep needs at least one value")
    if parameter == "correction_mode":
        return items
    try:
        return [int(v) if parameter in ("mu", "ssb_period") else float(v) for v in items]
    except ValueError:
        raise ConfigError(f"non-numeric value in --values for {parameter}") from None


def _variant(job):
    scenario, out = job
    return execute(scenario, out)


def cmd_sweep(args) -> int:
    scenario = _load(args)
    if args.param not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {args.param!r}; "
                          f"sweepable: {', '.join(SWEEPABLE)}")
    values = _parse_values(args.param, args.values)
    out = Path(args.out)
    _prepare_out(out, args.overwrite)
    jobs = []
    for idx, value in enumerate(values):
        try:
            variant = apply_sweep_value(scenario, args.param, value)
            variant = replace(variant, seed=derive_seed(scenario.seed, idx))
            variant.gnb_config()
            variant.master.clock()
        except ValueError as exc:
            raise ConfigError(f"{args.param}={value}: {exc}") from None
        jobs.append((variant, out / f"{args.param}={value}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_variant, jobs))
    else:
        results = [_variant(job) for job in jobs]
    rows = []
    for value, variant_rows in zip(values, results):
        for row in variant_rows:
            rows.append([args.param, value] + row)
    (out / "sweep_summary.csv").write_text(_csv(rows, ("parameter", "value") + SUMMARY_COLUMNS))
    for row in rows:
        logger.info("%s=%s %s %s: accuracy %s us, precision %s us", *row[:4], row[8], row[9])
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    comparison = []
    for path in map(Path, args.traces):
        try:
            trace = OffsetTrace.load(path)
        except TraceFormatError as exc:
            raise RuntimeFailure(f"{path}: {exc}") from None
        except OSError as exc:
            raise RuntimeFailure(f"{path}: {exc.strerror}") from None
        meta = trace.metadata
        label = (f"{meta['protocol']}_{meta['slave']}" if "protocol" in meta and "slave" in meta
                 else path.stem.removesuffix("_trace"))
        bound = args.outlier_bound_ps or int(meta.get("outlier_bound_ps", DEFAULT_OUTLIER_BOUND_PS))
        width = args.bin_width_ps or int(meta.get("bin_width_ps", 500_000))
        artifacts = analysis_artifacts(trace, label, bound, width)
        if out is None:
            sys.stdout.write(artifacts["report.txt"] + "\n")
        else:
            for suffix, text in artifacts.items():
                (out / f"{label}_{suffix}").write_text(text)
        try:
            report = sigma_table(trace, bound)
        except ValueError as exc:
            raise RuntimeFailure(f"{path}: {exc}") from None
        comparison.append([label, len(trace), f"{report.mean:.3f}", f"{report.std:.3f}",
                           report.outlier_count, f"{report.row(3).p_reduced:.4f}",
                           f"{report.row(3).p_full:.4f}"])
    if len(comparison) > 1:
        text = _csv(comparison, ("trace", "samples", "accuracy_ps", "precision_ps",
                                 "outlier_count", "p1_3sigma", "p2_3sigma"))
        if out is None:
            sys.stdout.write(text)
        else:
            (out / "comparison.csv").write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbis5g", description="RBIS-over-5G clock synchronization simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--quiet", action="store_true", help="only print errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--overwrite", action="store_true",
                       help="replace an existing output directory")
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    run = sub.add_parser("run", help="run one scenario")
    common(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    common(sweep)
    sweep.add_argument("--param", required=True, help=f"one of: {', '.join(SWEEPABLE)}")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="analyse existing trace CSVs")
    report.add_argument("traces", nargs="+", help="trace CSV files")
    report.add_argument("--out", help="write artifacts here instead of stdout")
    report.add_argument("--outlier-bound-ps", type=int, default=None)
    report.add_argument("--bin-width-ps", type=int, default=None)
    report.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logger.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
