"""Command-line entry point: ``fedsim run|sweep|fstar|spectral|gen-data``.

Exit codes: 0 on success, 1 when a run diverges, 2 on usage or config errors.
Sweeps report cells that never reach the target as ``not reached`` and
still exit 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .dataio import (
    gen_counterexample,
    gen_gaussian_quadratic,
    gen_logistic_classification,
    gen_overparam_regression,
    load_libsvm,
    write_libsvm,
)
from .errors import ConvergenceFailure, DivergenceError, FedsimError, InvalidInput, ParseError
from .experiments import solve_fstar, speedup_sweep, write_sweep_csv
from .federation import run
from .objectives import spectral_report

log = logging.getLogger("fedsim")

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2


def _svg_path(out: str | None, given: str | None) -> Path | None:
    if given:
        return Path(given)
    if out:
        return Path(out).with_suffix(".svg")
    return None


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    obj = cfg.build_objective()
    fed = cfg.build_federation(obj, seed=args.seed)
    try:
        traj = run(fed, obj)
    except DivergenceError as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            traj.to_csv(fh)
    else:
        sys.stdout.write(traj.to_csv())
    svg = _svg_path(args.out, args.svg)
    if svg is not None:
        from .report import trajectory_svg

        trajectory_svg({fed.rule: traj}, svg)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config)
    exp = cfg.experiment
    if "epsilon" not in exp:
        raise InvalidInput("sweep needs experiment.epsilon")
    fed = cfg.federation
    counts = exp.get("device_counts", [fed["N"]])
    data, _ = cfg.build_dataset()
    fstar = cfg.fstar()
    if fstar is None:
        fstar, _, _ = solve_fstar(cfg.build_objective(1))
    lam = cfg.build_objective(counts[0]).lam
    seeds = [args.seed] if args.seed is not None else exp.get("seeds", [0, 1, 2])
    res = speedup_sweep(
        data,
        cfg.objective["kind"],
        counts,
        eps=float(exp["epsilon"]),
        fstar=fstar,
        lam=lam,
        active=exp.get("active"),
        participation=float(exp.get("participation", 1.0)),
        rule=fed.get("rule", "sgd"),
        scheme=fed.get("sampling") if fed.get("sampling") not in (None, "full") else None,
        E=int(fed["E"]),
        T=int(fed["T"]),
        batch_size=fed.get("batch_size", 4),
        grid=cfg.grid(),
        seeds=seeds,
        eval_stride=fed.get("eval_stride"),
        jobs=args.jobs or int(exp.get("jobs", 1)),
    )
    out = Path(args.out)
    write_sweep_csv(res, out)
    from .report import sweep_svg

    sweep_svg(res, _svg_path(args.out, args.svg))
    for row in res.rows:
        print(f"N={row.n_devices} K={row.k_active} iters_to_eps={row.iters_to_eps}", file=sys.stderr)
    return EXIT_OK


def _objective_from_args(args):
    if args.config:
        cfg = RunConfig.load(args.config)
        return cfg.build_objective(args.devices)
    if not args.data:
        raise InvalidInput("give a config file or --data")
    from .dataio import partition_even
    from .objectives import Objective

    path = Path(args.data)
    if not path.is_file():
        raise InvalidInput(f"file not found: {path}")
    ds = load_libsvm(path)
    lam = args.lam
    if lam is None:
        lam = 1.0 / ds.n if args.objective == "reg_logistic" else 0.0
    return Objective(args.objective, ds, partition_even(ds, args.devices or 1), lam)


def cmd_fstar(args) -> int:
    obj = _objective_from_args(args)
    fstar, _, gn = solve_fstar(obj, tol=args.tol, method=args.method)
    doc = {"f_star": fstar, "grad_norm": gn, "tol": args.tol}
    if args.out:
        Path(args.out).write_text(json.dumps(doc) + "\n", encoding="utf-8")
    print(repr(fstar))
    return EXIT_OK


def cmd_spectral(args) -> int:
    obj = _objective_from_args(args)
    rep = spectral_report(obj, sample_count=args.samples, seed=args.seed or 0)
    text = rep.to_json(indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    kind = args.kind
    if args.d is None:
        args.d = 1 if kind == "counterexample" else 30
    if kind == "logistic":
        ds = gen_logistic_classification(args.n, args.d, args.seed, args.scale, args.flip)
    elif kind == "gaussian-quadratic":
        spectrum = (
            [float(s) for s in args.spectrum.split(",")] if args.spectrum else [1.0] * args.d
        )
        ds = gen_gaussian_quadratic(args.n, args.d, spectrum, args.seed)
    elif kind == "regression":
        if not args.features:
            raise InvalidInput("regression needs --features")
        ds = gen_overparam_regression(load_libsvm(args.features), args.seed)
    else:
        ds, _ = gen_counterexample(args.devices, args.per_device, args.radius, args.d)
    write_libsvm(ds, args.out)
    if ds.ground_truth is not None and args.truth:
        np.savetxt(args.truth, ds.ground_truth, fmt="%.17g")
    print(f"wrote {ds.n} samples with {ds.d} features to {args.out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedsim", description="Federated optimization simulator.")
    ap.add_argument("--version", action="version", version=f"fedsim {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log one line per sweep cell")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration and write its trajectory CSV")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override federation.master_seed")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="loss curve SVG path (default: next to --out)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="iterations-to-accuracy over device counts")
    p.add_argument("config", help="JSON run configuration with an experiment section")
    p.add_argument("--out", required=True, help="sweep CSV path; the SVG goes next to it")
    p.add_argument("--svg", help="override the SVG path")
    p.add_argument("--jobs", type=int, default=0, help="parallel worker processes")
    p.add_argument("--seed", type=int, help="use this single seed instead of experiment.seeds")
    p.set_defaults(func=cmd_sweep)

    for name, func, helptext in (
        ("fstar", cmd_fstar, "minimize the objective and print F*"),
        ("spectral", cmd_spectral, "print smoothness and condition numbers as JSON"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", nargs="?", help="JSON run configuration")
        p.add_argument("--data", help="libsvm file (instead of a config)")
        p.add_argument(
            "--objective", default="reg_logistic",
            choices=["reg_logistic", "logistic", "least_squares", "distance"],
        )
        p.add_argument("--lam", type=float, help="regularization (default 1/n for reg_logistic)")
        p.add_argument("--devices", type=int, help="number of devices for the even split")
        p.add_argument("--out", help="also write the JSON result here")
        if name == "fstar":
            p.add_argument("--tol", type=float, default=1e-9, help="gradient-norm tolerance")
            p.add_argument("--method", choices=["newton", "gd"], default="newton")
        else:
            p.add_argument("--samples", type=int, default=1000, help="Monte-Carlo gradient samples")
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("gen-data", help="write a synthetic dataset in libsvm format")
    p.add_argument("kind", choices=["logistic", "gaussian-quadratic", "regression", "counterexample"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--d", type=int, help="dimension (default 30; 1 for counterexample)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="logistic margin scale")
    p.add_argument("--flip", type=float, default=0.0, help="logistic label flip probability")
    p.add_argument("--spectrum", help="comma-separated feature variances")
    p.add_argument("--features", help="libsvm features for the regression generator")
    p.add_argument("--devices", type=int, default=2, help="counterexample device count")
    p.add_argument("--per-device", type=int, default=1, help="counterexample samples per device")
    p.add_argument("--radius", type=float, default=1.0, help="counterexample center radius")
    p.add_argument("--truth", help="write the ground-truth parameters here")
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (InvalidInput, ParseError, FileNotFoundError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceFailure as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FedsimError as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
