"""Command-line entry point: ``twinkernel check|simulate|compare|calibrate|demo``.

Exit codes: 0 on success, 1 when the models or data are at fault
(diagnostics, simulation errors, failed checkpoints), 2 when a file
cannot be read or written.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import impact
from .composition import system_run
from .core import Trace, TraceRecord, format_time, write_text_atomic
from .errors import ModelError, TwinKernelError
from .expr import evaluate
from .modelspec import ast as A
from .modelspec import canonical_print, check_document, parse_model, patch_param, validate_document
from .modelspec.lexer import TIME_UNITS
from .twinlink import DEFAULT_MAX_GAP, calibrate_scalar, compare_traces, load_plant_trace, parse_plant_csv

log = logging.getLogger("twinkernel")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_DOMAIN):
        super().__init__(message)
        self.code = code


@dataclass
class CliConfig:
    command: str
    files: list = field(default_factory=list)
    system: Optional[str] = None
    delta: Optional[int] = None
    horizon: Optional[int] = None
    out: Optional[Path] = None
    csv: Optional[Path] = None
    report: Optional[Path] = None
    signals: Optional[list] = None
    tol: float = 1e-3
    max_gap: Optional[int] = None
    strict: bool = False
    param: Optional[str] = None
    block: Optional[str] = None
    bounds: Optional[tuple] = None
    plant: Optional[Path] = None
    signal: Optional[str] = None
    scenarios: list = field(default_factory=list)
    list_only: bool = False

    def __post_init__(self):
        self.files = [Path(f).resolve() for f in self.files]
        for name in ("out", "csv", "report", "plant"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, Path(v).resolve())
        if self.delta is not None and self.delta <= 0:
            raise CliError("step must be positive")
        if self.horizon is not None and self.horizon <= 0:
            raise CliError("empty horizon")


_DURATION = re.compile(r"^\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)\s*([a-z]*)\s*$")


def parse_duration(text: str) -> int:
    """``"30s"``, ``"10ms"`` or a bare number of seconds, to nanoseconds."""
    m = _DURATION.match(text)
    if not m or (m.group(2) and m.group(2) not in TIME_UNITS):
        raise argparse.ArgumentTypeError(f"bad duration {text!r}; use e.g. 30s, 10ms or 0.5")
    factor = TIME_UNITS[m.group(2) or "s"]
    return round(float(m.group(1)) * factor)


def parse_bounds(text: str) -> tuple:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bounds must be LO,HI, got {text!r}") from None
    return lo, hi


# ---------------------------------------------------------------- helpers


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from None


def _write(path: Path, text: str) -> None:
    try:
        write_text_atomic(path, text)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from None
    log.info("wrote %s", path)


def _report_diagnostics(diags) -> None:
    for d in diags:
        print(d, file=sys.stderr)


def _load_system(cfg: CliConfig, path: Path):
    doc = parse_model(_read_bytes(path), str(path))
    ms = validate_document(doc, path.parent)
    try:
        sys_spec = ms.system(cfg.system)
    except KeyError as exc:
        raise CliError(f"{path}: {exc.args[0]}") from None
    return doc, sys_spec


def _override(cfg: CliConfig, spec):
    if cfg.delta is not None:
        spec = replace(spec, delta=cfg.delta)
    if cfg.horizon is not None:
        spec = replace(spec, horizon=cfg.horizon)
    return spec


def _trace_from_csv(text: str, source: str) -> Trace:
    plant = parse_plant_csv(text, source)
    recs = []
    for t, col, v in plant.records:
        src, _, name = col.rpartition(".")
        recs.append(TraceRecord(t, src, "signal", name, v))
    return Trace(recs)


def _load_twin(path: Path) -> Trace:
    text = _read_bytes(path).decode("utf-8", errors="strict")
    if path.suffix.lower() == ".csv":
        return _trace_from_csv(text, str(path))
    return Trace.decode(text)


# ---------------------------------------------------------------- commands


def cmd_check(cfg: CliConfig) -> int:
    status = EXIT_OK
    for path in cfg.files:
        data = _read_bytes(path)
        try:
            doc = parse_model(data, str(path))
        except ModelError as exc:
            _report_diagnostics(exc.diagnostics)
            status = EXIT_DOMAIN
            continue
        diags = check_document(doc, path.parent)
        _report_diagnostics(diags)
        if any(d.severity == "error" for d in diags):
            status = EXIT_DOMAIN
    return status


def cmd_simulate(cfg: CliConfig) -> int:
    path = cfg.files[0]
    _, spec = _load_system(cfg, path)
    spec = _override(cfg, spec)
    t0 = time.perf_counter()
    trace = system_run(spec)
    wall = time.perf_counter() - t0
    out = cfg.out or Path.cwd() / f"{path.stem}.jsonl"
    csv = cfg.csv or out.with_suffix(".csv")
    _write(out, trace.encode())
    _write(csv, trace.to_csv())
    events = sum(1 for r in trace.records if r.kind == "event" and r.source != "@kernel")
    print(f"system {spec.name}: {spec.steps} steps of {format_time(spec.delta)}, "
          f"{events} events, {len(trace)} records, {wall:.3f} s wall")
    print(f"trace {out}")
    print(f"signals {csv}")
    return EXIT_OK


def cmd_compare(cfg: CliConfig) -> int:
    twin_path, plant_path = cfg.files
    twin = _load_twin(twin_path)
    try:
        plant = load_plant_trace(plant_path)
    except OSError as exc:
        raise CliError(f"{plant_path}: {exc.strerror or exc}", EXIT_IO) from None
    gap = cfg.max_gap if cfg.max_gap is not None else DEFAULT_MAX_GAP
    report = compare_traces(twin, plant, cfg.signals, tol=cfg.tol, max_gap=gap)
    sys.stdout.write(report.to_table())
    if cfg.report is not None:
        _write(cfg.report, report.to_json())
    if cfg.strict and any(s.first_divergence is not None for s in report.signals):
        return EXIT_DOMAIN
    return EXIT_OK


def _param_value(doc, param, block):
    """Current numeric value of ``param``, or None when it is not a literal."""
    for b in doc.blocks:
        if isinstance(b, A.Block) and (block is None or b.name == block):
            for it in b.of(A.ParamDecl):
                if it.name == param:
                    try:
                        return float(evaluate(it.value))
                    except (TwinKernelError, TypeError, ValueError):
                        return None
    raise CliError(f"no parameter {param!r} in the model")


def cmd_calibrate(cfg: CliConfig) -> int:
    path = cfg.files[0]
    doc, base = _load_system(cfg, path)
    base = _override(cfg, base)
    initial = _param_value(doc, cfg.param, cfg.block)
    try:
        plant = load_plant_trace(cfg.plant)
    except OSError as exc:
        raise CliError(f"{cfg.plant}: {exc.strerror or exc}", EXIT_IO) from None
    signal = cfg.signal
    if signal is None:
        if len(plant.signals) != 1:
            raise CliError("plant log has several signals; choose one with --signal")
        signal = plant.signals[0]

    def template(value):
        ms = validate_document(patch_param(doc, cfg.param, value, cfg.block), path.parent)
        return _override(cfg, ms.system(base.name))

    gap = cfg.max_gap if cfg.max_gap is not None else DEFAULT_MAX_GAP
    result = calibrate_scalar(template, cfg.param, cfg.bounds, plant, signal, cfg.tol,
                              initial=initial, max_gap=gap)
    print(f"{result.param} = {result.value!r}  (RMSE {result.rmse:.6g}, "
          f"{result.evaluations} evaluations, bracket {result.bracket_width:.3g})")
    out = cfg.out or path.with_name(f"{path.stem}.calibrated.twin")
    _write(out, canonical_print(patch_param(doc, cfg.param, result.value, cfg.block)))
    if cfg.report is not None:
        _write(cfg.report, result.to_json())
    print(f"model {out}")
    return EXIT_OK


def cmd_demo(cfg: CliConfig) -> int:
    if cfg.list_only:
        for sc in impact.SCENARIOS.values():
            print(f"{sc.name:14} {sc.filename:26} {sc.summary}")
        return EXIT_OK
    names = cfg.scenarios or list(impact.SCENARIOS)
    for n in names:
        if n not in impact.SCENARIOS:
            raise CliError(f"unknown scenario {n!r}; choose from {', '.join(impact.SCENARIOS)}")
    failed = 0
    for n in names:
        sc = impact.SCENARIOS[n]
        t0 = time.perf_counter()
        trace, rows = impact.run_scenario(n)
        wall = time.perf_counter() - t0
        print(f"== {n}: {sc.summary} ({wall:.2f} s)")
        for cp, ok, got in rows:
            print(f"  {'PASS' if ok else 'FAIL'} {cp.describe()} (got {got!r})")
            failed += not ok
        if cfg.out is not None:
            _write(cfg.out / f"{n}.jsonl", trace.encode())
            _write(cfg.out / f"{n}.csv", trace.to_csv())
    return EXIT_DOMAIN if failed else EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "calibrate": cmd_calibrate,
    "demo": cmd_demo,
}


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="twinkernel",
        description="Simulate, check and calibrate heterogeneous digital-twin models.",
        epilog="Set TWINKERNEL_LOG=debug|info|warning for log output on standard error.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    c = sub.add_parser("check", help="parse and validate model files", formatter_class=fmt)
    c.add_argument("files", nargs="+", metavar="FILE")

    def run_opts(q):
        q.add_argument("--system", help="system block to run when the file has several")
        q.add_argument("--step", dest="delta", type=parse_duration, help="override the macro step, e.g. 10ms")
        q.add_argument("--horizon", type=parse_duration, help="override the horizon, e.g. 30s")

    s = sub.add_parser("simulate", help="run a system and write its trace", formatter_class=fmt)
    s.add_argument("files", nargs=1, metavar="FILE")
    run_opts(s)
    s.add_argument("--out", help="trace file (JSON lines); default <model>.jsonl in the working directory")
    s.add_argument("--csv", help="signal CSV; default next to the trace")

    def gap_opt(q):
        q.add_argument("--max-gap", type=parse_duration,
                       help=f"largest time offset for joining samples (default {format_time(DEFAULT_MAX_GAP)})")

    k = sub.add_parser("compare", help="compare a twin trace with a plant log", formatter_class=fmt)
    k.add_argument("twin", metavar="TWIN", help="twin trace (.jsonl) or signal CSV")
    k.add_argument("plant_log", metavar="PLANT", help="plant CSV log")
    k.add_argument("--signals", type=lambda t: [x for x in t.split(",") if x],
                   help="comma-separated twin columns, or twin=plant pairs; default all shared")
    k.add_argument("--tol", type=float, default=1e-3, help="divergence threshold")
    gap_opt(k)
    k.add_argument("--report", help="also write the report as JSON")
    k.add_argument("--strict", action="store_true", help="exit 1 when any signal diverges")

    a = sub.add_parser("calibrate", help="fit one model parameter to a plant log", formatter_class=fmt)
    a.add_argument("files", nargs=1, metavar="MODEL")
    run_opts(a)
    a.add_argument("--param", required=True)
    a.add_argument("--block", help="only patch the parameter in this block")
    a.add_argument("--bounds", type=parse_bounds, required=True, help="search interval LO,HI")
    a.add_argument("--plant", required=True, help="plant CSV log")
    a.add_argument("--signal", help="twin column to fit, or twin=plant; default the only plant signal")
    a.add_argument("--tol", type=float, default=1e-3, help="final bracket width")
    gap_opt(a)
    a.add_argument("--out", help="patched model; default <model>.calibrated.twin")
    a.add_argument("--report", help="also write the result as JSON")

    d = sub.add_parser("demo", help="run the bundled IMPACT scenarios", formatter_class=fmt)
    d.add_argument("scenarios", nargs="*", metavar="SCENARIO", help="default: all")
    d.add_argument("--list", dest="list_only", action="store_true", help="list scenarios and exit")
    d.add_argument("--out", help="directory for <scenario>.jsonl and .csv")
    return p


def _configure_logging() -> None:
    level = os.environ.get("TWINKERNEL_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    ns = build_parser().parse_args(argv)
    if ns.command == "compare":
        ns.files = [ns.twin, ns.plant_log]
    opts = {k: v for k, v in vars(ns).items() if k in CliConfig.__dataclass_fields__}
    try:
        cfg = CliConfig(**opts)
        return COMMANDS[cfg.command](cfg)
    except CliError as exc:
        print(f"twinkernel: {exc}", file=sys.stderr)
        return exc.code
    except ModelError as exc:
        _report_diagnostics(exc.diagnostics)
        return EXIT_DOMAIN
    except TwinKernelError as exc:
        print(f"twinkernel: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:  # empty horizon and friends from the runtime
        print(f"twinkernel: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"twinkernel: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
