"""Command-line interface.

Subcommands mirror the pipeline stages: ``simulate`` synthesizes a record
and its true factor, ``fit-prior`` fits the coarse autoregressive prior,
``covfit`` restores feasibility of a sample covariance, ``estimate`` runs
the dual solver, ``divergence`` evaluates the divergence families between
saved spectra, and ``experiment`` reproduces the full study.

Exit codes: 0 on success, 1 on input errors, 2 on solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .covfit import fit_covariance
from .divergences import (
    alpha_divergence,
    beta_divergence,
    itakura_saito,
    kl_type,
    tau_divergence,
)
from .errors import ConvergenceError, SpecestError
from .estimator import estimate_spectrum
from .filterbank import (
    load_bank,
    load_covariance,
    sample_covariance,
    simulate_state,
)
from .grids import FrequencyGrid, load_spectrum, save_spectrum
from .statespace import SpectralFactor, factor_to_spectrum, load_model, save_model

FMT = "{:.17g}"


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid-size", type=int, default=1024, help="quadrature nodes K")
    parser.add_argument("--seed", type=int, default=12345, help="master RNG seed")
    parser.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--config", type=Path, help="JSON config overriding flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize a record from a random shaping filter")
    _common_flags(sim)
    sim.add_argument("--channels", type=int, default=2)
    sim.add_argument("--order", type=int, default=10, help="shaping filter order")
    sim.add_argument("--num-samples", type=int, default=500)
    sim.add_argument("--burn-in", type=int, default=200)
    sim.add_argument("--data-out", type=Path, default=None, help="default <out-dir>/data.csv")
    sim.add_argument("--truth-out", type=Path, default=None, help="default <out-dir>/truth.json")

    fit = sub.add_parser("fit-prior", help="least-squares autoregressive prior from a record")
    _common_flags(fit)
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--order", type=int, default=1)
    fit.add_argument("--out", type=Path, required=True)

    cov = sub.add_parser("covfit", help="feasibility-restoring covariance fit")
    _common_flags(cov)
    cov.add_argument("--sigma", type=Path, help="covariance JSON ({'sigma': ...})")
    cov.add_argument("--data", type=Path, help="record CSV; sample the bank state covariance instead")
    cov.add_argument("--burn-in", type=int, default=0, help="state samples to discard with --data")
    cov.add_argument("--bank", type=Path, required=True, help="bank JSON ({'A','B'})")
    cov.add_argument("--nu", type=int, required=True)
    cov.add_argument("--out", type=Path, required=True)

    est = sub.add_parser("estimate", help="dual Newton spectral estimation")
    _common_flags(est)
    est.add_argument("--prior", type=Path, required=True, help="prior factor JSON")
    est.add_argument("--bank", type=Path, required=True)
    est.add_argument("--sigma", type=Path, required=True)
    est.add_argument("--nu", type=int, default=2)
    est.add_argument("--nu-inf", action="store_true", help="Kullback-Leibler (large-order) variant")
    est.add_argument("--tol", type=float, default=1e-6)
    est.add_argument("--max-iter", type=int, default=200)
    est.add_argument("--out", type=Path, required=True, help="estimated spectrum CSV")
    est.add_argument("--report", type=Path, default=None, help="solver report JSON")
    est.add_argument("--plot", type=Path, default=None, help="optional spectrum figure PNG")

    div = sub.add_parser("divergence", help="divergence between two spectral densities")
    _common_flags(div)
    div.add_argument("--phi", type=Path, required=True, help="first spectrum CSV")
    div.add_argument("--psi", type=Path, help="second spectrum CSV (S0/alpha/beta)")
    div.add_argument("--psi-factor", type=Path, help="second density as a factor JSON (tau/S1)")
    div.add_argument(
        "--family", choices=["tau", "is", "kl", "alpha", "beta"], default="tau"
    )
    div.add_argument("--tau", type=float, default=0.5, help="order for tau/alpha/beta")

    exp = sub.add_parser("experiment", help="full estimation study with reports and figures")
    _common_flags(exp)
    exp.add_argument("--runs", type=int, default=None)
    exp.add_argument("--no-figures", action="store_true")

    return parser


def _save_data_csv(path, data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y_{i + 1}" for i in range(data.shape[1])])
        for row in data:
            writer.writerow([FMT.format(v) for v in row])


def _load_data_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows)


def _cmd_simulate(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    data_out = args.data_out or args.out_dir / "data.csv"
    truth_out = args.truth_out or args.out_dir / "truth.json"
    data, truth = pipeline.simulate_process(
        args.channels, args.order, args.num_samples, args.seed, burn_in=args.burn_in
    )
    _save_data_csv(data_out, data)
    save_model(truth_out, truth.realization)
    print(f"wrote {data_out} ({data.shape[0]} samples) and {truth_out}")
    return 0


def _cmd_fit_prior(args) -> int:
    data = _load_data_csv(args.data)
    prior = pipeline.fit_prior(data, data.shape[1], args.order)
    save_model(args.out, prior.realization)
    print(f"wrote prior factor {args.out} (state dimension {prior.n})")
    return 0


def _cmd_covfit(args) -> int:
    bank = load_bank(args.bank)
    if (args.sigma is None) == (args.data is None):
        raise SpecestError("provide exactly one of --sigma or --data")
    if args.sigma is not None:
        sigma_c = load_covariance(args.sigma)
    else:
        states = simulate_state(bank, _load_data_csv(args.data))
        sigma_c = sample_covariance(states, bank, burn_in=args.burn_in)
    report = fit_covariance(sigma_c, bank, args.nu)
    payload = {
        "sigma": report.estimate.sigma.tolist(),
        "iterations": report.iterations,
        "gradient_norm": report.gradient_norm,
        "feasibility_residual": report.estimate.feasibility_residual,
        "objective": report.objective_history[-1],
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(
        f"fit covariance in {report.iterations} iterations; "
        f"feasibility residual {report.estimate.feasibility_residual:.3e}"
    )
    return 0


def _cmd_estimate(args) -> int:
    prior = SpectralFactor(load_model(args.prior))
    prior.validate()
    bank = load_bank(args.bank)
    sigma = load_covariance(args.sigma)
    grid = FrequencyGrid(args.grid_size)
    nu = math.inf if args.nu_inf else args.nu
    report = estimate_spectrum(sigma, bank, prior, nu, grid, tol=args.tol, max_iter=args.max_iter)
    save_spectrum(args.out, report.phi)
    if args.report is not None:
        payload = {
            "nu": "inf" if nu is math.inf else int(nu),
            "lambda": report.lambda_opt.tolist(),
            "iterations": report.iterations,
            "constraint_residual": report.constraint_residual,
            "dual_values": report.dual_values,
            "residual_history": report.residual_history,
            "converged": report.converged,
            "degree_bound": report.degree_bound,
        }
        with open(args.report, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    if args.plot is not None:
        from .plots import render_spectrum

        render_spectrum(args.plot, report.phi, title="Estimated spectral density")
    print(
        f"estimate converged in {report.iterations} iterations; "
        f"moment residual {report.constraint_residual:.3e}; wrote {args.out}"
    )
    return 0


def _cmd_divergence(args) -> int:
    phi = load_spectrum(args.phi, coercive=True)
    if args.family in ("tau", "kl"):
        if args.psi_factor is None:
            raise SpecestError(f"--family {args.family} needs --psi-factor")
        factor = SpectralFactor(load_model(args.psi_factor))
        factor.validate()
        if args.family == "tau":
            value = tau_divergence(phi, factor, args.tau)
        else:
            value = kl_type(phi, factor)
    else:
        if args.psi is not None:
            psi = load_spectrum(args.psi, coercive=True)
        elif args.psi_factor is not None:
            factor = SpectralFactor(load_model(args.psi_factor))
            factor.validate()
            psi = factor_to_spectrum(factor, phi.grid)
        else:
            raise SpecestError("provide --psi or --psi-factor")
        if args.family == "is":
            value = itakura_saito(phi, psi)
        elif args.family == "alpha":
            value = alpha_divergence(phi, psi, args.tau)
        else:
            value = beta_divergence(phi, psi, args.tau)
    print(FMT.format(value))
    return 0


def _cmd_experiment(args) -> int:
    if args.config is not None:
        config = pipeline.ExperimentConfig.from_json(args.config)
    else:
        config = pipeline.ExperimentConfig(seed=args.seed, grid_size=args.grid_size)
    if args.runs is not None:
        config.runs = args.runs
    if args.no_figures:
        config.figures = False
    summary = pipeline.run_experiment(config, args.out_dir)
    failures = summary["failures"]
    print(f"experiment complete: {len(summary['cells'])} cells; {len(failures)} failed runs")
    for name, cell in summary["cells"].items():
        print(f"  {name}: median err {FMT.format(cell['median'])} over {cell['count']} runs")
    return 2 if failures else 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit-prior": _cmd_fit_prior,
    "covfit": _cmd_covfit,
    "estimate": _cmd_estimate,
    "divergence": _cmd_divergence,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpecestError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
