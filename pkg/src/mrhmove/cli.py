"""Command-line surface: simulate, density, loglik, fit.

Exit codes: 0 on success, 2 on domain or parse errors, 3 on numerical
non-convergence.  Every command is deterministic given --seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConvergenceError, NumericalError, ParseError
from .inference import FitOptions, Track, fit_bm_baseline, fit_mle, loglik_forward
from .io import (parse_track, read_fit_json, write_density_csv,
                 write_fit_json, write_track_csv)
from .occupation import occ_atom, occ_density
from .params import ModelParams
from .simulate import STATIONARY, simulate_mrh

_PARAM_FLAGS = ("lambda0", "lambda1", "lambda2", "p1", "sigma")


def _add_param_flags(sub, required=True):
    for name in _PARAM_FLAGS:
        sub.add_argument(f"--{name}", type=float, required=required)


def _params_from_args(args) -> ModelParams:
    return ModelParams(args.lambda0, args.lambda1, args.lambda2,
                       args.p1, args.sigma)


def _add_track_flags(sub):
    sub.add_argument("--track", required=True, help="track CSV path")
    sub.add_argument("--time-unit", default="hours",
                     choices=["hours", "minutes", "seconds", "days"])
    sub.add_argument("--dim", type=int, default=None)
    sub.add_argument("--round-grid", type=float, default=0.0,
                     help="round coordinates to the nearest multiple (km)")


def _load_track(args) -> Track:
    return parse_track(args.track, time_unit=args.time_unit, dim=args.dim,
                       round_grid=args.round_grid)


def _cmd_simulate(args) -> int:
    params = _params_from_args(args)
    if args.times:
        times = np.array([float(v) for v in args.times.split(",")])
    else:
        if args.t_end is None or args.step is None:
            raise ValueError("give either --times or both --t-end and --step")
        times = np.arange(0.0, args.t_end + 0.5 * args.step, args.step)
    start = STATIONARY if args.start == "stationary" else int(args.start)
    track = simulate_mrh(params, times, dim=args.dim, start=start,
                         seed=args.seed)
    write_track_csv(args.out, track.times, track.positions,
                    states=track.states, occupations=track.occupations)
    print(f"wrote {track.times.size} observations to {args.out}")
    return 0


def _cmd_density(args) -> int:
    params = _params_from_args(args)
    t = args.t
    if args.grid_size < 2:
        raise ValueError("--grid-size must be at least 2")
    grid = np.linspace(0.0, t, args.grid_size + 2)[1:-1]
    starts = [args.start] if args.start is not None else [0, 1, 2]
    records = []
    for i in starts:
        loc, w = occ_atom(i, t, params)
        end_at_atom = i  # no jump means the end state equals the start state
        records.append({"kind": "atom", "start": i, "end": end_at_atom,
                        "s": loc, "value": w})
        for j in range(3):
            dens = occ_density(i, j, grid, t, params)
            records.extend({"kind": "density", "start": i, "end": j,
                            "s": float(s), "value": float(v)}
                           for s, v in zip(grid, dens))
    write_density_csv(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_loglik(args) -> int:
    track = _load_track(args)
    if args.params_json:
        est = read_fit_json(args.params_json)["estimates"]
        params = ModelParams(**est)
    else:
        missing = [n for n in _PARAM_FLAGS if getattr(args, n) is None]
        if missing:
            raise ValueError(f"missing parameter flags {missing} "
                             "(or use --params-json)")
        params = _params_from_args(args)
    ll = loglik_forward(track, params)
    print(f"{ll:.9f}")
    return 0


def _fit_report(model, estimates: dict, loglik, converged, iterations,
                seed, settings) -> dict:
    return {"model": model, "estimates": estimates, "loglik": loglik,
            "converged": bool(converged), "iterations": int(iterations),
            "seed": seed, "settings": settings}


def _cmd_fit(args) -> int:
    track = _load_track(args)
    settings = {"round_grid": args.round_grid, "time_unit": args.time_unit,
                "restarts": args.restarts, "max_evals": args.max_evals,
                "threads": args.threads}
    if args.model == "bm":
        sigma = fit_bm_baseline(track)
        report = _fit_report("bm", {"sigma": sigma}, None, True, 0,
                             args.seed, settings)
    else:
        fixed = {"p1": 1.0, "lambda2": 1.0} if args.model == "mr" else None
        opts = FitOptions(restarts=args.restarts, max_evals=args.max_evals,
                          seed=args.seed)
        if args.threads > 1 and args.restarts > 1:
            # independent single-start fits in a thread pool; keep the best
            def one(r):
                o = FitOptions(restarts=1, max_evals=args.max_evals,
                               seed=args.seed + r, jitter=0.5 if r else 0.0)
                return fit_mle(track, fixed=fixed, opts=o)
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                results = list(pool.map(one, range(args.restarts)))
            res = max(results, key=lambda r: r.log_lik)
            res.iterations = sum(r.iterations for r in results)
        else:
            res = fit_mle(track, fixed=fixed, opts=opts)
        est = res.estimates.as_dict()
        if args.model == "mr":
            del est["lambda2"]  # unreachable state, not part of this model
        report = _fit_report(args.model, est, res.log_lik, res.converged,
                             res.iterations, args.seed, settings)
        if not res.converged:
            if args.out:
                write_fit_json(args.out, report)
            print(json.dumps(report, indent=2))
            raise ConvergenceError("fit did not converge")
    if args.out:
        write_fit_json(args.out, report)
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mrhmove",
        description="Moving-resting-handling movement process: simulate "
                    "tracks, evaluate occupation densities, and fit by "
                    "maximum likelihood.  Units: hours and kilometers.")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a track")
    _add_param_flags(sim)
    sim.add_argument("--t-end", type=float, default=None)
    sim.add_argument("--step", type=float, default=None)
    sim.add_argument("--times", default=None,
                     help="explicit comma-separated observation times")
    sim.add_argument("--dim", type=int, default=2)
    sim.add_argument("--start", default="stationary",
                     choices=["stationary", "0", "1", "2"])
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    den = sub.add_parser("density", help="export occupation density curves")
    _add_param_flags(den)
    den.add_argument("--t", type=float, required=True)
    den.add_argument("--start", type=int, default=None, choices=[0, 1, 2])
    den.add_argument("--grid-size", type=int, default=200)
    den.add_argument("--seed", type=int, default=0)
    den.add_argument("--out", required=True)
    den.set_defaults(func=_cmd_density)

    ll = sub.add_parser("loglik", help="forward log-likelihood of a track")
    _add_track_flags(ll)
    _add_param_flags(ll, required=False)
    ll.add_argument("--params-json", default=None,
                    help="fit report whose estimates to evaluate")
    ll.add_argument("--seed", type=int, default=0)
    ll.set_defaults(func=_cmd_loglik)

    fit = sub.add_parser("fit", help="fit a model to a track")
    _add_track_flags(fit)
    fit.add_argument("--model", default="mrh", choices=["mrh", "mr", "bm"])
    fit.add_argument("--restarts", type=int, default=3)
    fit.add_argument("--max-evals", type=int, default=2000)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--threads", type=int, default=1)
    fit.add_argument("--out", default=None)
    fit.set_defaults(func=_cmd_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
