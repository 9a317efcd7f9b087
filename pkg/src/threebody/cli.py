"""Command-line entry point ``threebody``.

Every subcommand prints results to stdout.  On failure it prints one line
``error: <kind>: <message>`` to stderr and exits with status 1 (2 for
usage errors, including missing input files).
"""

import argparse
import csv
import json
import logging
import sys
from decimal import Decimal

import numpy as np

from . import ann
from .cns import IntegratorConfig
from .continuation import MassPath, build_seed_grid, continue_along
from .dynamics import Masses
from .errors import LoadError, ThreeBodyError
from .expansion import RoadmapConfig, assemble_classifier_dataset, expand_rounds, reports_csv
from .finder import OrbitGuess, grid_search, newton_correct, refine
from .numerics import is_float_backend
from .stability import DEFAULT_EPS, SCREEN_EPS, screen_stability, stability_of
from .store import export_trajectory, load_orbits, loads_orbits, save_orbits

log = logging.getLogger("threebody")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- parsing helpers

def _interval(text):
    lo, hi = text.split(":")
    return Decimal(lo), Decimal(hi)


def _region(text):
    """``"0.95:1.00,1.00:1.05"`` -> ((lo1, hi1), (lo2, hi2))."""
    a, b = text.split(",")
    return _interval(a), _interval(b)


def _pair(text):
    a, b = text.split(",")
    return Decimal(a), Decimal(b)


def _strategy(text):
    """``ring:7`` or ``rect:lo1:hi1:lo2:hi2``."""
    parts = text.split(":")
    if parts[0] == "ring" and len(parts) == 2:
        return ("ring", int(parts[1]))
    if parts[0] in ("rect", "rectangle") and len(parts) == 5:
        lo1, hi1, lo2, hi2 = (Decimal(p) for p in parts[1:])
        return ("rectangle", ((lo1, hi1), (lo2, hi2)))
    raise argparse.ArgumentTypeError(f"bad strategy {text!r}; use ring:W or rect:lo1:hi1:lo2:hi2")


def _ranges(text):
    """``x1=lo:hi:step,v1=lo:hi:step,v2=lo:hi:step``."""
    out = {}
    for item in text.split(","):
        name, spec = item.split("=")
        lo, hi, step = spec.split(":")
        out[name.strip()] = (Decimal(lo), Decimal(hi), Decimal(step))
    missing = {"x1", "v1", "v2"} - set(out)
    if missing:
        raise argparse.ArgumentTypeError(f"ranges lack {sorted(missing)}")
    return out


def _cfg(args, fallback="standard"):
    digits = getattr(args, "digits", None)
    order = getattr(args, "order", None)
    if digits is None:
        base = getattr(IntegratorConfig, fallback)()
        return base if order is None else base.with_(order=order)
    return IntegratorConfig.for_digits(digits, order)


def _read_guess(path):
    """First record of a store file, or a JSON object with the guess fields."""
    with open(path) as fh:
        text = fh.read()
    d = json.loads(text.splitlines()[0])
    if "schema" in d:
        return loads_orbits(text.splitlines()[0])[0].guess()
    m = Masses(d["m1"], d["m2"], d.get("m3", "1"))
    return OrbitGuess(m, d["x1"], d["v1"], d["v2"], d["T"], d["theta"], d.get("family", "default"))


def _read_failures(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return [(Decimal(a), Decimal(b)) for a, b in rows[1:]]


def _write_failures(failures, path):
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m1", "m2"])
        for a, b in failures:
            w.writerow([str(a), str(b)])


def _print_record(rec):
    print(json.dumps({"m1": str(rec.masses.m1), "m2": str(rec.masses.m2), "x1": str(rec.x1),
                      "v1": str(rec.v1), "v2": str(rec.v2), "T": str(rec.T),
                      "delta_T": rec.delta_T, "converged": rec.converged, "iterations": rec.iterations,
                      "reason": rec.reason}))


# ---------------------------------------------------------------- commands

def cmd_seed_grid(args):
    seed = newton_correct(_read_guess(args.seed_file), args.tol, cfg=_cfg(args))
    if not seed.converged:
        raise ThreeBodyError(f"seed did not converge: {seed.reason}")
    grid = build_seed_grid(seed, args.region, args.dm, args.tol, _cfg(args))
    save_orbits(grid.orbits, args.out)
    print(f"orbits {len(grid.orbits)} uncovered {len(grid.uncovered)}")
    for a, b in grid.uncovered:
        print(f"uncovered {a} {b}")


def cmd_continue(args):
    start = load_orbits(getattr(args, "from"))[0]
    path = MassPath.between(start.masses, Masses(*args.to, start.masses.m3), args.dm)
    recs = continue_along(start, path, args.tol, _cfg(args))
    save_orbits([start] + recs, args.out)
    print(f"reached {len(recs)} of {len(path) - 1} legs")
    if len(recs) < len(path) - 1:
        raise ThreeBodyError(f"continuation stopped before {path[len(recs) + 1]}")


def cmd_expand(args):
    orbits = load_orbits(args.store)
    if not orbits:
        raise ThreeBodyError("store is empty")
    failures = _read_failures(args.failures_in) if args.failures_in else []
    rounds = list(args.strategy) * args.rounds if len(args.strategy) == 1 else list(args.strategy)
    train = ann.TrainConfig(hidden=tuple(args.hidden), max_epochs=args.epochs)
    cfg = RoadmapConfig(seed_region=None, rounds=rounds, stall=args.stall, tol=args.tol, train=train,
                        seed=args.seed, expand_cfg=_cfg(args, "fast"))
    first = orbits[0]
    res = expand_rounds(orbits, failures, first.theta, cfg, first.family, first.masses.m3)
    save_orbits(res.orbits, args.out or args.store)
    ann.save_model(res.model, args.model)
    if args.failures:
        _write_failures(res.failures, args.failures)
    sys.stdout.write(reports_csv(res.reports))


def _model(path, mode):
    model = ann.load_model(path)
    if model.output_mode != mode:
        kind = "classifier" if mode == "softmax" else "regression model"
        raise LoadError(f"{path} is not a {kind}")
    return model


def cmd_predict(args):
    model = _model(args.model, "linear")
    x1, v1, v2, T = ann.forward(model, [float(args.m1), float(args.m2)])
    print(f"x1={x1:.6f} v1={v1:.6f} v2={v2:.6f} T={T:.6f}")


def cmd_correct(args):
    cfg = _cfg(args)
    rec = newton_correct(_read_guess(args.guess), args.tol, args.max_iter, cfg)
    if rec.converged and args.refine:
        rec = refine(rec, args.refine, cfg)
    _print_record(rec)
    if args.out:
        save_orbits([rec], args.out)
    if not rec.converged:
        raise ThreeBodyError(f"no convergence: {rec.reason}")


def cmd_stability(args):
    cfg = _cfg(args)
    orbits = load_orbits(args.store)
    if is_float_backend(cfg.digits):
        # double precision cannot resolve the unit multipliers to 1e-7; screen instead
        reports = screen_stability(orbits, cfg, args.eps or SCREEN_EPS)
    else:
        reports = [stability_of(rec, cfg, args.eps or DEFAULT_EPS)[0] for rec in orbits]
    for rec, report in zip(orbits, reports):
        if report is None:
            print(f"{rec.masses.m1} {rec.masses.m2} unknown (integration failed)")
            continue
        rec.stability = report.label
        flag = " ambiguous" if report.ambiguous else ""
        print(f"{rec.masses.m1} {rec.masses.m2} {report.label} {report.max_modulus_excess:.3e}{flag}")
    save_orbits(orbits, args.out or args.store)


def cmd_train_classifier(args):
    orbits = load_orbits(args.store)
    failures = _read_failures(args.failures) if args.failures else []
    data = assemble_classifier_dataset(orbits, failures, seed=args.seed)
    cfg = ann.TrainConfig.classifier(hidden=tuple(args.hidden), max_epochs=args.epochs)
    model, hist = ann.train_classifier(data, cfg, args.seed)
    ann.save_model(model, args.out)
    if args.history:
        ann.history_csv(hist, args.history)
    Xt, Yt = data.part("test")
    if len(Xt):
        cm = ann.confusion_matrix(np.argmax(Yt, axis=1), ann.predict_class(model, Xt))
        m = ann.metrics(cm)
        print(f"test accuracy {m['accuracy']:.4f} macro_f1 {m['macro_f1']:.4f}")


def cmd_classify(args):
    model = _model(args.model, "softmax")
    p = ann.forward(model, [float(args.m1), float(args.m2)])
    k = int(np.argmax(p))
    print(f"{ann.CLASS_NAMES[k]} " + " ".join(f"{v:.6f}" for v in p))


def cmd_grid_search(args):
    cfg = _cfg(args, "fast")
    masses = Masses(args.m1, args.m2, args.m3)
    found = grid_search(masses, args.ranges, args.tmax, args.window, cfg, args.resolution, args.family)
    for g in found:
        print(json.dumps({"m1": str(g.masses.m1), "m2": str(g.masses.m2), "m3": str(g.masses.m3),
                          "x1": str(g.x1), "v1": str(g.v1), "v2": str(g.v2), "T": str(g.T),
                          "theta": str(g.theta), "family": g.family}))


def cmd_export(args):
    rec = load_orbits(args.orbit)[args.index]
    text = export_trajectory(rec, args.samples, args.frame, _cfg(args))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser

def _precision_flags(p, digits=None):
    p.add_argument("--digits", type=int, default=digits, help="significant decimal digits")
    p.add_argument("--order", type=int, default=None, help="Taylor order")


def build_parser():
    parser = _Parser(prog="threebody", description="Relative periodic orbits of the planar three-body problem.")
    parser.add_argument("--seed", type=int, default=0, help="random seed for training and splits")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("seed-grid", help="continue a seed orbit over a mass lattice")
    p.add_argument("--seed-file", required=True)
    p.add_argument("--region", type=_region, required=True, help="m1lo:m1hi,m2lo:m2hi")
    p.add_argument("--dm", type=Decimal, default=Decimal("0.01"))
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    _precision_flags(p)
    p.set_defaults(func=cmd_seed_grid)

    p = sub.add_parser("continue", help="continue one orbit to a target mass point")
    p.add_argument("--from", required=True, help="store file; its first record is the start")
    p.add_argument("--to", type=_pair, required=True, help="m1,m2")
    p.add_argument("--dm", type=Decimal, default=Decimal("0.01"))
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    _precision_flags(p)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("expand", help="expansion rounds from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True, help="where to write the final regressor")
    p.add_argument("--strategy", type=_strategy, action="append", required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--stall", type=float, default=0.08)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--hidden", type=int, nargs="+", default=[1024] * 6)
    p.add_argument("--epochs", type=int, default=50000)
    p.add_argument("--out", default=None, help="output store (default: overwrite --store)")
    p.add_argument("--failures", default=None, help="CSV to write failed mass points")
    p.add_argument("--failures-in", default=None, help="CSV of previously failed points")
    _precision_flags(p)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("predict", help="regressor prediction at a mass point")
    p.add_argument("--model", required=True)
    p.add_argument("--m1", type=Decimal, required=True)
    p.add_argument("--m2", type=Decimal, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("correct", help="Newton-correct a guess")
    p.add_argument("--guess", required=True, help="JSON guess or store file")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--refine", type=float, default=None, help="further refine to this delta_T")
    p.add_argument("--out", default=None)
    _precision_flags(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("stability", help="classify every orbit in a store")
    p.add_argument("--store", required=True)
    p.add_argument("--eps", type=float, default=None,
                   help="modulus tolerance (default 1e-7, or 1e-4 with --digits 15)")
    p.add_argument("--out", default=None)
    _precision_flags(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("train-classifier", help="train the orbit classifier")
    p.add_argument("--store", required=True)
    p.add_argument("--failures", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--hidden", type=int, nargs="+", default=[256] * 6)
    p.add_argument("--epochs", type=int, default=5000)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("classify", help="classifier prediction at a mass point")
    p.add_argument("--model", required=True)
    p.add_argument("--m1", type=Decimal, required=True)
    p.add_argument("--m2", type=Decimal, required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("grid-search", help="scan collinear initial conditions for near-returns")
    p.add_argument("--m1", type=Decimal, required=True)
    p.add_argument("--m2", type=Decimal, required=True)
    p.add_argument("--m3", type=Decimal, default=Decimal(1))
    p.add_argument("--ranges", type=_ranges, required=True, help="x1=lo:hi:step,v1=...,v2=...")
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--window", type=float, required=True)
    p.add_argument("--resolution", type=float, default=0.005)
    p.add_argument("--family", default="default")
    _precision_flags(p)
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("export", help="trajectory CSV for one stored orbit")
    p.add_argument("--orbit", required=True, help="store file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--frame", choices=("inertial", "rotating"), default="inertial")
    p.add_argument("--out", default=None)
    _precision_flags(p)
    p.set_defaults(func=cmd_export)
    return parser


def _kind(exc):
    name = type(exc).__name__
    return {"LoadError": "load", "ConfigurationError": "config"}.get(name, name)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"error: usage: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (ThreeBodyError, ValueError, OSError, KeyError, IndexError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {_kind(exc)}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
