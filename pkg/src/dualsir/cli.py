"""Command-line interface: simulate / fit / summarize.

Exit codes: 0 success, 2 malformed input, 3 numerical failure.
Thread-count for chain parallelism can be overridden with the
DUALSIR_THREADS environment variable.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .io import InputError
from .model import aggregate_observation_vector
from .filtering import FilterError, marginal_log_likelihood, sample_smoothed_states
from .lna import LnaDivergenceError
from .posterior import PosteriorModel, to_constrained
from .sampler import run as run_sampler

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualsir",
        description="Two-pathogen SIR inference from aggregate reports "
                    "and virological test counts")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides the config)")
        p.add_argument("--out", required=True, help="output directory")

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p_sim)
    p_sim.add_argument("--params", required=True,
                       help="true-parameter file ([kinetic]/[aux] INI)")
    p_sim.add_argument("--weeks", type=int, default=52)

    p_fit = sub.add_parser("fit", help="run the posterior sampler on a dataset")
    common(p_fit)
    p_fit.add_argument("--data", required=True, help="weekly data CSV")

    p_sum = sub.add_parser("summarize",
                           help="recompute the summary table from an archive")
    common(p_sum)
    p_sum.add_argument("--archive", required=True,
                       help="posterior-sample CSV written by fit")
    return parser


def _resolve_seed(cfg, args):
    if args.seed is not None:
        return replace(cfg.sampler, seed=args.seed)
    return cfg.sampler


def cmd_simulate(args) -> int:
    cfg = io.read_config(args.config)
    sampler_cfg = _resolve_seed(cfg, args)
    theta, tau = io.read_params_file(args.params, cfg.constants)
    if args.weeks < 2:
        raise InputError("--weeks must be >= 2")
    from .ssa import generate_synthetic_dataset
    dataset, truth = generate_synthetic_dataset(
        theta, tau, cfg.constants, args.weeks, sampler_cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_data(dataset, out / "data.csv")
    io.write_truth(truth, out / "truth.csv")
    print(f"wrote {out / 'data.csv'} and {out / 'truth.csv'}")
    return EXIT_OK


def _posterior_outputs(posterior: PosteriorModel, archive, master_seed: int):
    """Constrained draws plus latent-path reconstructions for export."""
    data = posterior.data
    k = posterior.constants
    G = aggregate_observation_vector()
    M = data.n_weeks
    n = archive.n_draws
    params = np.empty((n, 18))
    flu = np.empty((n, M))
    rsv = np.empty((n, M))
    bg = np.empty((n, M))
    agg = np.empty((n, M))
    pred_mean = np.empty((n, M))
    pred_draw = np.empty((n, M))
    pred_rng = np.random.default_rng(
        np.random.SeedSequence([int(master_seed) & (2 ** 63 - 1), 0x9E37]))
    for i in range(n):
        theta, tau = to_constrained(archive.z[i], k)
        params[i, :4] = (theta.beta1, theta.beta2, theta.sigma1, theta.sigma2)
        params[i, 4] = theta.c0
        params[i, 5] = tau.sigma_obs
        params[i, 6:10] = (tau.r, tau.c, tau.nu, tau.v)
        params[i, 10:] = theta.x0
        ll, trace = marginal_log_likelihood(data, theta, tau,
                                            cfg=posterior.integrator)
        if not np.isfinite(ll):
            raise RuntimeError(f"archived draw {i} no longer evaluates: "
                               f"{trace.failure}")
        x, d = sample_smoothed_states(trace, int(archive.seeds[i]))
        xc = np.clip(x, 0.0, None)
        flu[i] = xc[:, 1] + xc[:, 6]
        rsv[i] = xc[:, 3] + xc[:, 4]
        bg[i] = np.clip(d, 0.0, None)
        agg[i] = tau.r * (xc @ G + bg[i])
        pred_mean[i] = trace.innovation_mean
        pred_draw[i] = trace.innovation_mean + \
            np.sqrt(trace.innovation_var) * pred_rng.standard_normal(M)
    return params, flu, rsv, bg, agg, pred_mean, pred_draw


def _bands(paths: np.ndarray) -> np.ndarray:
    """(3, M) array of the 2.5/50/97.5 percentiles across draws."""
    return np.percentile(paths, [2.5, 50.0, 97.5], axis=0)


def cmd_fit(args) -> int:
    cfg = io.read_config(args.config)
    sampler_cfg = _resolve_seed(cfg, args)
    data = io.read_data(args.data, cfg.constants)
    posterior = PosteriorModel(data, hyper=cfg.priors,
                               integrator=cfg.integrator,
                               use_virological=cfg.use_virological)
    archive = run_sampler(posterior, sampler_cfg)
    params, flu, rsv, bg, agg, pred_mean, pred_draw = _posterior_outputs(
        posterior, archive, sampler_cfg.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_archive(archive, params, out / "samples.csv")
    io.write_summary(io.summarize_archive(params, archive.log_post),
                     out / "summary.csv")
    weeks = np.arange(1, data.n_weeks + 1)
    io.write_trajectories(
        {"weeks": weeks, "influenza": _bands(flu), "rsv": _bands(rsv),
         "background": _bands(bg), "aggregate": _bands(agg)},
        out / "trajectories.csv")
    pq = np.percentile(pred_draw, [2.5, 97.5], axis=0)
    io.write_predictive(weeks, data.y, pred_mean.mean(axis=0), pq[0], pq[1],
                        out / "predictive.csv")
    meta = [
        f"weeks = {data.n_weeks}",
        f"draws = {archive.n_draws}",
        f"chains = {sampler_cfg.n_chains}",
        f"iterations = {sampler_cfg.n_iter}",
        f"adapt = {sampler_cfg.n_adapt}",
        f"thin = {sampler_cfg.thin}",
        f"seed = {sampler_cfg.seed}",
        f"use_virological = {cfg.use_virological}",
        "ladder = " + ",".join(f"{t:.6g}" for t in archive.ladder),
    ]
    io.atomic_write_text(out / "meta.txt", "\n".join(meta) + "\n")
    print(f"archived {archive.n_draws} draws to {out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    params, log_post, _, _ = io.read_archive(args.archive)
    rows = io.summarize_archive(params, log_post)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_summary(rows, out / "summary.csv")
    for name, mapv, lo, hi in rows:
        print(f"{name:8s} MAP {mapv:.6g}  95% CI ({lo:.6g}, {hi:.6g})")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit,
                "summarize": cmd_summarize}
    try:
        return handlers[args.command](args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (LnaDivergenceError, FilterError, RuntimeError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
