"""Command-line front end.

``simulate <config> --out <dir>`` runs the three canned studies for one
system configuration and writes fig2.csv, fig34.csv, fig56.csv and a
summary.txt into the output directory.  Identical (config, seed) inputs
produce byte-identical outputs regardless of --threads.
"""

from __future__ import annotations

import argparse
import os
import time
from dataclasses import replace

from . import channel, experiments, socp


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="simulate",
        description="Run the pilot-split noise sweep, the SCA convergence "
                    "traces, and the rate-region Monte Carlo; writes "
                    "fig2.csv, fig34.csv, fig56.csv and summary.txt.")
    ap.add_argument("config", help="path to a 'key = value' configuration file")
    ap.add_argument("--out", default=".",
                    help="output directory, created if missing (default: .)")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the configured RNG seed")
    ap.add_argument("--trials", type=int, default=None,
                    help="override the configured Monte-Carlo trial count "
                         "(the convergence traces use at most 10)")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker processes for trial-level parallelism "
                         "(default: 1)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = channel.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, mc_trials=args.trials)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    socp.counters.reset()

    sweep = experiments.run_error_power_sweep(
        experiments.ExperimentSpec.error_power_sweep(
            cfg, out_path=os.path.join(args.out, "fig2.csv")))
    conv = experiments.run_sca_convergence(
        experiments.ExperimentSpec.sca_convergence(
            cfg, trials=min(10, cfg.mc_trials), threads=args.threads,
            out_path=os.path.join(args.out, "fig34.csv")))
    region = experiments.run_rate_region(
        experiments.ExperimentSpec.rate_region(
            cfg, threads=args.threads,
            out_path=os.path.join(args.out, "fig56.csv")))

    experiments.write_summary(os.path.join(args.out, "summary.txt"), cfg,
                              time.perf_counter() - t0, sweep=sweep,
                              convergence=conv, region=region)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
