"""Command-line entry point.

Every verb takes a scenario file (``--config``; omitted means the built-in
reference scenario) and an output directory. The exit status is 1 when any
acceptance threshold that applies to the verb's measurements fails, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .coherent import fibonacci_directions
from .matter import ChargeModel, SolitonField, ir_limit_soliton, soliton_position_tail
from .observables import transverse_formula_electric
from .scenario import ScenarioError, load_scenario, reference_scenario


def _scenario(args):
    if args.config is None:
        return reference_scenario()
    return load_scenario(args.config)


def _judge(ctx) -> int:
    report = pipeline.finalize(ctx)
    checks = report["acceptance"]["checks"]
    for name, c in sorted(checks.items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['value']} (threshold {c['threshold']})")
    return 0 if report["acceptance"]["passed"] else 1


def cmd_simulate(args):
    ctx = pipeline.build_context(_scenario(args), args.out)
    pipeline.stage_simulate(ctx)
    return _judge(ctx)


def cmd_scatter(args):
    ctx = pipeline.build_context(_scenario(args), args.out)
    pipeline.stage_scatter(ctx)
    return _judge(ctx)


def cmd_check_conservation(args):
    ctx = pipeline.build_context(_scenario(args), args.out)
    pipeline.stage_conservation(ctx)
    return _judge(ctx)


def cmd_soft_photon(args):
    ctx = pipeline.build_context(_scenario(args), args.out)
    rep = pipeline.stage_soft_photon(ctx)
    if rep is not None:
        print(f"{'kx':>8} {'ky':>8} {'kz':>8} {'|res E|':>12} {'|res B|':>12}")
        for d, re, rb in zip(ctx.grid.directions, rep.electric.per_direction,
                             rep.magnetic.per_direction):
            print(f"{d[0]:8.4f} {d[1]:8.4f} {d[2]:8.4f} {re:12.4e} {rb:12.4e}")
        print(f"relative residual: E {rep.electric.relative:.3e}  B {rep.magnetic.relative:.3e}"
              f"  (budget {rep.budget:.3e})")
    return _judge(ctx)


def cmd_coherent_check(args):
    ctx = pipeline.build_context(_scenario(args), args.out)
    pipeline.stage_coherent(ctx)
    return _judge(ctx)


def cmd_spatial_tail(args):
    ctx = pipeline.build_context(_scenario(args), args.out)
    pipeline.stage_spatial_tail(ctx)
    return _judge(ctx)


def cmd_report(args):
    report = pipeline.run_scenario(_scenario(args), args.out)
    pipeline.emit_plots_data(args.out)
    for name, c in sorted(report["acceptance"]["checks"].items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['value']} (threshold {c['threshold']})")
    return 0 if report["acceptance"]["passed"] else 1


def cmd_soliton_table(args):
    """Closed-form soliton tails over a speed sweep, plus the transverse-formula identity."""
    sc = _scenario(args)
    model = ChargeModel(sc.model.e, sc.model.m, sc.model.r_phi)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dirs = fibonacci_directions(args.directions)
    worst = 0.0
    rows = []
    for speed in args.speeds:
        v = speed * np.array([0.0, 0.0, 1.0])
        s = SolitonField(v, model)
        e_ir, b_ir = ir_limit_soliton(s, dirs)
        e_x = soliton_position_tail(s, dirs)
        ptr = e_ir - dirs * np.sum(dirs * e_ir, axis=-1, keepdims=True)
        ident = np.max(np.abs(-ptr - transverse_formula_electric(v, model, dirs)))
        worst = max(worst, float(ident))
        for d, ei, bi, ex in zip(dirs, e_ir, b_ir, e_x):
            rows.append([speed, *d, *ei.imag, *bi.imag, *ex])
    header = ["speed", "kx", "ky", "kz", "im_ir_ex", "im_ir_ey", "im_ir_ez",
              "im_ir_bx", "im_ir_by", "im_ir_bz", "tail_ex", "tail_ey", "tail_ez"]
    pipeline._write_csv(out / "soliton_table.csv", header, rows)
    ok = worst < 1e-14
    print(f"{'PASS' if ok else 'FAIL'}  transverse_identity: {worst} (threshold 1e-14)")
    (out / "soliton_table.json").write_text(json.dumps({"max_identity_residual": worst}) + "\n")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softphoton", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    verbs = {
        "simulate": (cmd_simulate, "integrate forward and backward, write trajectories"),
        "scatter": (cmd_scatter, "scattered data and wave-operator convergence"),
        "check-conservation": (cmd_check_conservation, "infrared-tail conservation drift"),
        "soft-photon": (cmd_soft_photon, "soft-photon residual table"),
        "coherent-check": (cmd_coherent_check, "coherent-state infrared matching"),
        "spatial-tail": (cmd_spatial_tail, "position-space tail conservation and flux"),
        "report": (cmd_report, "full pipeline with report.json and plot data"),
        "soliton-table": (cmd_soliton_table, "closed-form soliton tails over a speed sweep"),
    }
    for name, (fn, help_) in verbs.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, default=None, help="scenario YAML file")
        sp.add_argument("--out", type=Path, default=Path("runs") / name, help="output directory")
        if name == "soliton-table":
            sp.add_argument("--speeds", type=float, nargs="+",
                            default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
            sp.add_argument("--directions", type=int, default=16)
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
