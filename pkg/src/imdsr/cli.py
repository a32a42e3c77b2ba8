"""Command-line entry point: ``imdsr <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="imdsr", description="Induction machine current-control laboratory.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("sim", help="simulate one scenario and write its timeseries")
    s.add_argument("scenario")
    s.add_argument("--out", help="timeseries CSV (default: stdout)")
    s.add_argument("--controller", help="override the scenario controller (pi, dsr or expr dir)")

    s = sub.add_parser("compare", help="compare current controllers on one scenario")
    s.add_argument("scenario")
    s.add_argument("--controllers", default="pi,dsr")
    s.add_argument("--out", help="report CSV (default: stdout)")
    s.add_argument("--n-harmonics", type=int, default=40)

    s = sub.add_parser("dataset", help="build d/q training datasets from PI simulations")
    s.add_argument("scenario_dir")
    s.add_argument("--out", nargs=2, metavar=("VD_CSV", "VQ_CSV"), required=True)

    s = sub.add_parser("train", help="fit symbolic d/q laws to a dataset pair")
    s.add_argument("vd_csv")
    s.add_argument("vq_csv")
    s.add_argument("--config", help="JSON file of TrainConfig fields")
    s.add_argument("--out", required=True, help="output directory for vd.expr / vq.expr")

    s = sub.add_parser("metrics", help="tracking and THD figures of a timeseries CSV")
    s.add_argument("timeseries")
    s.add_argument("--fundamental", type=float, required=True, help="synchronous frequency in Hz")
    s.add_argument("--n-harmonics", type=int, default=40)
    s.add_argument("--periods", type=int, default=10)
    return p


def _emit(text, out):
    from .harness import atomic_write
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _cmd_sim(args):
    from .harness import load_scenario, run_scenario
    sc = load_scenario(args.scenario)
    ts = run_scenario(sc, controller=args.controller)
    _emit(ts.to_csv_text(), args.out)


def _cmd_compare(args):
    from .harness import compare, load_scenario
    sc = load_scenario(args.scenario)
    ctrls = [c.strip() for c in args.controllers.split(",") if c.strip()]
    if not ctrls:
        raise UsageError("--controllers must name at least one controller")
    report = compare(sc, ctrls, args.n_harmonics)
    _emit(report.to_csv_text(), args.out)


def _cmd_dataset(args):
    from .dsr import generate_dataset
    from .harness import load_scenario
    d = Path(args.scenario_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {d}")
    files = sorted(d.glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no scenario files in {d}")
    ds_vd, ds_vq = generate_dataset([load_scenario(f) for f in files])
    ds_vd.write_csv(args.out[0])
    ds_vq.write_csv(args.out[1])
    print(f"wrote {len(ds_vd)} rows to {args.out[0]} and {args.out[1]}", file=sys.stderr)


def _cmd_train(args):
    from .dsr import TrainConfig, read_dataset, train, write_outputs
    cfg = TrainConfig()
    if args.config:
        cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    data = {"vd": read_dataset(args.vd_csv), "vq": read_dataset(args.vq_csv)}
    results, log = train(data["vd"], data["vq"], cfg)
    write_outputs(args.out, results, log, cfg, data)
    for axis, res in results.items():
        print(f"{axis}: reward={res.reward:.6f}", file=sys.stderr)


def _cmd_metrics(args):
    from .control import phase_a
    from .harness import read_timeseries
    from .metrics import SignalWindow, thd, tracking_metrics
    ts = read_timeseries(args.timeseries)
    f0 = args.fundamental
    if not f0 > 0:
        raise UsageError("--fundamental must be > 0")
    m = int(math.ceil(args.periods / (f0 * ts.Ts)))
    if m > len(ts):
        raise ValueError(f"timeseries too short for {args.periods} periods at {f0} Hz")
    w = slice(len(ts) - m, len(ts))
    theta = 2.0 * math.pi * f0 * np.asarray(ts["t"][w])
    ia = phase_a(ts["ids"][w], ts["iqs"][w], theta)
    ia_ref = phase_a(ts["ids_ref"][w], ts["iqs_ref"][w], theta)
    d = tracking_metrics(ts["ids_ref"][w], ts["ids"][w])
    q = tracking_metrics(ts["iqs_ref"][w], ts["iqs"][w])
    a = tracking_metrics(ia_ref, ia)
    dist = thd(SignalWindow(ia, 1.0 / ts.Ts, f0), args.n_harmonics)
    rows = [("axis_d_rmse", d.rmse), ("axis_q_rmse", q.rmse), ("thd_ratio", dist),
            ("rms_ia", a.rms_measured), ("pkpk_err", a.peak_to_peak_error)]
    sys.stdout.write("metric,value\n" + "".join(f"{k},{v!r}\n" for k, v in rows))


COMMANDS = {"sim": _cmd_sim, "compare": _cmd_compare, "dataset": _cmd_dataset,
            "train": _cmd_train, "metrics": _cmd_metrics}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to status 2
        print(f"imdsr: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
