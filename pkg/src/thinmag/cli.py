"""Command line entry point: ``thinmag <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance threshold missed (verify-corrector).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import AppConfig, ConfigError, load_config, parse_config
from .corrector import verify_corrector
from .harness import emit_plot_data, emit_report, run_convergence, with_overrides
from .lattice import zeta_H, zeta_HN
from .limit import intermediate_params, limit_params, solve_A3, solve_B3
from .noise import NoiseStream, covariance_grad0, eta_coefficients, helicity, helicity_from_table, sample_increments, velocity_field
from .solver import SimulationError, Stepper, initial_field, mean_A3, mean_B3, simulate
from .spectral import SpectralField, write_field_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4


def _app(args):
    return load_config(args.config) if args.config else parse_config({})


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args, app: AppConfig):
    cfg = app.sim_config(args.N)
    res = simulate(cfg, args.seed, args.realization, noise=not args.no_noise)
    keys = list(res.diagnostics[0])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + keys)
        for t, d in zip(res.times, res.diagnostics):
            w.writerow([repr(t)] + [repr(float(d[k])) for k in keys])
    if args.dump_fields:
        ddir = Path(args.dump_fields)
        ddir.mkdir(parents=True, exist_ok=True)
        for i, (t, b, a) in enumerate(zip(res.times, res.mean_B3, res.mean_A3)):
            both = SpectralField(b.domain, np.concatenate([b.coeffs, a.coeffs]))
            write_field_csv(both, ddir / f"mean_{i:04d}.csv")
        write_field_csv(res.final.B, ddir / "final_B.csv")
    print(f"wrote {out} ({len(res.times)} records)")
    return EXIT_OK


def cmd_limit_solve(args, app):
    cfg = app.sim_config(args.N)
    B0 = initial_field(cfg.initial, cfg.domain)
    b0, a0 = mean_B3(B0), mean_A3(B0)
    p = intermediate_params(cfg.spec) if args.intermediate else limit_params(cfg.spec)
    b, a = solve_B3(b0, a0, args.t, p), solve_A3(a0, args.t, p)
    write_field_csv(SpectralField(b.domain, np.concatenate([b.coeffs, a.coeffs])), args.out)
    print(f"wrote {args.out} (components: B3, A3; kappa={p.kappa:.6g})")
    return EXIT_OK


def cmd_converge(args, app):
    exp = with_overrides(
        app.experiment,
        Ns=tuple(args.Ns) if args.Ns else None,
        realizations=args.realizations,
        theta1=args.theta1,
        theta2=args.theta2,
        delta=args.delta,
        seed=args.seed,
        workers=args.workers,
    )
    out_dir = Path(args.out_dir or app.output_dir)

    def progress(rec):
        print(f"N={rec['N']:>3}  errB={rec['errB']:.4e} +- {rec['errB_se']:.1e}  "
              f"errA={rec['errA']:.4e} +- {rec['errA_se']:.1e}", flush=True)

    report = run_convergence(exp, progress=progress)
    for fmt in app.formats:
        emit_report(report, out_dir / f"report.{fmt}", fmt)
    emit_plot_data(report, out_dir)
    for name, s in report.slopes.items():
        print(f"slope {name}: {s['slope']:.3f} (r2 {s['r2']:.3f})")
    print(f"wrote reports to {out_dir}")
    return EXIT_OK


def cmd_verify_corrector(args, app):
    spec = app.spec(args.N)
    worst, per = verify_corrector(spec, args.trials, args.seed, kmax=args.kmax, jmax=args.jmax)
    _write_json({"residual_max": worst, "per_trial": per, "threshold": args.threshold}, None)
    return EXIT_OK if worst < args.threshold else EXIT_ACCEPT


def _covariance_summary(spec):
    e = eta_coefficients(spec)
    G, R = covariance_grad0(spec)
    h_eps, h_lim = helicity(spec)
    return {
        "N": spec.N,
        "eta": spec.eta,
        "eta_VT": e.eta_VT,
        "eta_VR": e.eta_VR,
        "eta_HR": e.eta_HR,
        "eta_T_eps": e.eta_T_eps,
        "eta_R_eps": e.eta_R_eps,
        "eta_T_limit": e.eta_T_limit,
        "eta_T_gap": e.eta_T_eps - e.eta_T_limit,
        "zeta_HN2": e.zeta_HN2,
        "zeta_H2": zeta_H(2),
        "zeta_HN0": zeta_HN(0, spec.N),
        "R_eps": R.tolist(),
        "helicity_eps": h_eps,
        "helicity_limit": h_lim,
        "helicity_gap": h_eps - h_lim,
        "eta_T_over_eta": e.eta_T_limit / spec.eta,
    }


def cmd_covariance(args, app):
    _write_json(_covariance_summary(app.spec(args.N)), args.out)
    return EXIT_OK


def cmd_helicity(args, app):
    spec = app.spec(args.N)
    h_eps, h_lim = helicity(spec)
    _write_json({"N": spec.N, "helicity_eps": h_eps, "helicity_limit": h_lim,
                 "helicity_mode_sum": helicity_from_table(spec)}, args.out)
    return EXIT_OK


def cmd_dump_field(args, app):
    cfg = app.sim_config(args.N)
    if args.kind == "initial":
        f = initial_field(cfg.initial, cfg.domain)
    else:
        inc = sample_increments(cfg.spec, cfg.dt, NoiseStream(args.seed, args.realization), args.step)
        f = velocity_field(cfg.spec, inc)
    write_field_csv(f, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_bench(args, app):
    rows = []
    for N in args.Ns or app.experiment.Ns:
        cfg = app.sim_config(N)
        st = Stepper(cfg)
        B = initial_field(cfg.initial, cfg.domain)
        stream = NoiseStream(0, 0)
        incs = [sample_increments(cfg.spec, cfg.dt, stream, n) for n in range(args.steps)]
        st.noise_apply(B, incs[0])
        t0 = time.perf_counter()
        for inc in incs:
            st.noise_apply(B, inc)
        per = (time.perf_counter() - t0) / args.steps
        rows.append({"N": N, "grid": list(st.grid.shape), "seconds_per_step": per})
        print(f"N={N:>3} grid={st.grid.shape} noise_apply {per * 1e3:.2f} ms/step", flush=True)
    if args.out:
        _write_json(rows, args.out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="thinmag", description="Thin-layer stochastic induction simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="TOML configuration file")
        p.set_defaults(fn=fn)
        return p

    p = add("simulate", cmd_simulate, "run one realization and write diagnostics CSV")
    p.add_argument("--N", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--out", default="run.csv")
    p.add_argument("--dump-fields", metavar="DIR")
    p.add_argument("--no-noise", action="store_true")

    p = add("limit-solve", cmd_limit_solve, "solve the 2D limit system at time t")
    p.add_argument("--N", type=int)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", default="limit.csv")
    p.add_argument("--intermediate", action="store_true", help="use kappa_eps and R_eps instead")

    p = add("converge", cmd_converge, "Monte-Carlo convergence experiment across N")
    p.add_argument("--Ns", type=int, nargs="+")
    p.add_argument("--realizations", type=int)
    p.add_argument("--theta1", type=float)
    p.add_argument("--theta2", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir")

    p = add("verify-corrector", cmd_verify_corrector, "check the corrector identity on random fields")
    p.add_argument("--N", type=int)
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--kmax", type=int, default=3)
    p.add_argument("--jmax", type=int, default=1)
    p.add_argument("--threshold", type=float, default=1e-9)

    p = add("covariance", cmd_covariance, "eta coefficients, R and helicity as JSON")
    p.add_argument("--N", type=int)
    p.add_argument("--out")

    p = add("helicity", cmd_helicity, "mean helicity of the noise")
    p.add_argument("--N", type=int)
    p.add_argument("--out")

    p = add("dump-field", cmd_dump_field, "write the initial field or a noise velocity as CSV")
    p.add_argument("--N", type=int)
    p.add_argument("--kind", choices=["initial", "velocity"], default="initial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--out", default="field.csv")

    p = add("bench", cmd_bench, "time noise_apply per step across N")
    p.add_argument("--Ns", type=int, nargs="+")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--out")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        app = _app(args)
        return args.fn(args, app)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
