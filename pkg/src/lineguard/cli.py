"""Command line entry points.

Subcommands: simulate (scenario config to waveform file), analyze
(waveform file to per-window verdicts), run-suite (scenario grid to a
report directory), sweep-noise / sweep-params (robustness studies), and
report (re-render tables and figures from stored verdicts).

Exit codes: 0 success, 2 when non-finite numbers reach the decision
stage, 1 for any other error raised by this package.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

from . import harness, reporting
from .decision import BEFORE_WINDOW
from .errors import DataIntegrityError, InvalidParameterError, LineGuardError
from .grid import line_from_cfg, scenario_from_cfg
from .harness import DetectionParams
from .simulate import realize_scenario, record_from_csv, record_to_csv


def _float_list(text: str):
    return [float(v) for v in text.replace(",", " ").split()]


def _detection_params(args) -> DetectionParams:
    return DetectionParams(
        window_ms=args.window_ms,
        m_splits=args.m,
        l=args.l,
        guard=not getattr(args, "no_guard", False),
    )


def _add_detection_flags(p):
    p.add_argument("--window-ms", type=float, default=2.0,
                   help="observation window length (default 2 ms)")
    p.add_argument("--m", type=int, default=10,
                   help="number of inception-interval splits (default 10)")
    p.add_argument("--l", type=int, default=5,
                   help="derivative fit length, odd (default 5)")
    p.add_argument("--no-guard", action="store_true",
                   help="disable the fault-current materiality check")


def cmd_simulate(args) -> int:
    scn = scenario_from_cfg(args.scenario)
    rec = realize_scenario(scn)
    record_to_csv(rec, args.output)
    print(f"wrote {rec.n_samples} samples to {args.output}")
    return 0


def cmd_analyze(args) -> int:
    record = record_from_csv(args.waveform)
    line = line_from_cfg(args.line)
    stream = harness.run_detection_stream(record, line, _detection_params(args))
    trips = 0
    for wv in stream:
        t0 = wv.start_sample / record.sample_rate * 1e3
        t1 = (wv.start_sample + wv.window_len) / record.sample_rate * 1e3
        if wv.verdict is None:
            print(f"window {wv.window_index:3d} [{t0:7.2f},{t1:7.2f}) ms  "
                  f"rejected: {wv.error}")
            continue
        v = wv.verdict
        line_out = (f"window {wv.window_index:3d} [{t0:7.2f},{t1:7.2f}) ms  "
                    f"{v.state:7s} case {v.selected_case:2d}")
        if v.tripped:
            trips += 1
            if v.alpha_est is not None:
                line_out += f"  alpha {v.alpha_est:.4f}"
            if v.fault_type_est is not None:
                line_out += f"  type {v.fault_type_est}"
            inc = wv.inception_abs()
            if inc == BEFORE_WINDOW:
                line_out += "  inception before window"
            elif inc is not None:
                line_out += f"  inception samples {inc[0]}..{inc[1]}"
        print(line_out)
    print(f"{trips} trip window(s) out of {len(stream)}")
    return 0


def _load_suite(path, args):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidParameterError(f"cannot read suite config {path}")
    if "suite" not in cp:
        raise InvalidParameterError(f"{path} has no [suite] section")
    sec = cp["suite"]
    kind = sec.get("kind", "internal").strip()
    seed = args.seed if args.seed is not None else sec.getint("seed", 0)
    snr = sec.getfloat("noise_snr_db", fallback=None)
    loss = sec.getfloat("packet_loss_prob", fallback=None)

    def levels(key, default):
        raw = sec.get(key, fallback=None)
        return tuple(_float_list(raw)) if raw else default

    if kind == "normal":
        kw = {"n_scenarios": sec.getint("n_scenarios", 10),
              "duration_ms": sec.getfloat("duration_ms", 20.0)}
        if args.full_scale:
            kw.update(harness.full_scale_kwargs("normal"))
        cases = harness.normal_suite(seed=seed, snr_db=snr, loss_prob=loss, **kw)
    elif kind == "internal":
        kw = {
            "grid_sets": sec.getint("grid_sets", 2),
            "r_levels": levels("resistance_levels_ohm", (0.0, 50.0, 100.0)),
            "alphas": levels("alphas", (0.1, 0.3, 0.5, 0.7, 0.9)),
            "t_inception_ms": levels("t_inception_ms",
                                     (5.0, 8.5, 15.0, 21.5, 25.0)),
            "duration_ms": sec.getfloat("duration_ms", 32.0),
        }
        if args.full_scale:
            kw.update(harness.full_scale_kwargs("internal"))
        cases = harness.internal_suite(seed=seed, snr_db=snr, loss_prob=loss, **kw)
    elif kind == "external":
        kw = {
            "grid_sets": sec.getint("grid_sets", 2),
            "r_levels": levels("resistance_levels_ohm", (0.0, 50.0, 100.0)),
            "t_inception_ms": levels("t_inception_ms",
                                     (5.0, 8.5, 15.0, 21.5, 25.0)),
            "clearing_delay_ms": levels("clearing_delay_ms", (15.0, 30.0)),
            "duration_ms": sec.getfloat("duration_ms", 70.0),
        }
        if args.full_scale:
            kw.update(harness.full_scale_kwargs("external"))
        cases = harness.external_suite(seed=seed, snr_db=snr, loss_prob=loss, **kw)
    elif kind == "sweep":
        cases = harness.sweep_suite(seed=seed, snr_db=snr, loss_prob=loss)
    else:
        raise InvalidParameterError(f"unknown suite kind {kind!r}")
    name = sec.get("name", f"{kind} suite")
    return cases, name


def cmd_run_suite(args) -> int:
    cases, name = _load_suite(args.suite, args)
    report = harness.run_suite(
        cases, params=_detection_params(args), jobs=args.jobs,
        meta={"suite": name},
    )
    reporting.write_report(report, args.output, title=name)
    m = report.metrics
    print(f"{name}: {len(cases)} scenarios, {m['n_windows']} windows")
    print(f"security {m['security']:.4f}  dependability {m['dependability']:.4f}")
    print(f"report written to {args.output}")
    return 0


def _run_sweep(args, key_name: str, values, runner) -> int:
    cases, name = _load_suite(args.suite, args)
    results = runner(cases, values, params=_detection_params(args),
                     jobs=args.jobs)
    os.makedirs(args.output, exist_ok=True)
    summary = []
    for value, report in results:
        tag = f"{key_name}_{value:g}".replace("-", "m").replace(".", "p")
        reporting.write_report(report, os.path.join(args.output, tag),
                               title=f"{name} @ {key_name}={value:g}")
        summary.append(harness.sweep_summary_row(key_name, value, report))
    reporting.write_sweep_csv(
        key_name, summary, os.path.join(args.output, f"sweep_{key_name}.csv")
    )
    reporting.figure_sweep(key_name, summary, args.output)
    for row in summary:
        print(f"{key_name}={row[key_name]:g}  security {row['security']:.4f}"
              f"  dependability {row['dependability']:.4f}")
    print(f"sweep written to {args.output}")
    return 0


def cmd_sweep_noise(args) -> int:
    return _run_sweep(args, "snr_db", _float_list(args.snr),
                      harness.sweep_noise)


def cmd_sweep_params(args) -> int:
    return _run_sweep(args, "deviation_pct", _float_list(args.dev),
                      harness.sweep_line_params)


def cmd_report(args) -> int:
    reporting.rerender(args.directory)
    print(f"re-rendered report in {args.directory}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lineguard",
        description="settingless two-terminal line protection toolkit",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scenario config -> waveform file")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("analyze", help="waveform file -> window verdicts")
    p.add_argument("waveform")
    p.add_argument("--line", required=True,
                   help="config file with a [line] section")
    _add_detection_flags(p)
    p.set_defaults(fn=cmd_analyze)

    for cmd, fn, extra in (
        ("run-suite", cmd_run_suite, ()),
        ("sweep-noise", cmd_sweep_noise, ("snr",)),
        ("sweep-params", cmd_sweep_params, ("dev",)),
    ):
        p = sub.add_parser(cmd)
        p.add_argument("suite", help="suite config file")
        p.add_argument("-o", "--output", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override the suite master seed")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--full-scale", action="store_true",
                       help="full-size study grids (slow)")
        if "snr" in extra:
            p.add_argument("--snr", default="30,60,80,110",
                           help="comma separated SNR list in dB")
        if "dev" in extra:
            p.add_argument("--dev", default="-10,0,10",
                           help="comma separated r/l deviation percentages")
        _add_detection_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("report", help="re-render tables and figures")
    p.add_argument("directory")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DataIntegrityError as exc:
        print(f"data integrity error: {exc}", file=sys.stderr)
        return 2
    except LineGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
