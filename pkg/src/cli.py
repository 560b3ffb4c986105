# Command-line entry point: figure sweeps, ad-hoc BER runs and gain tables

import argparse
import logging
import os
import sys

from src import config
from src.analysis import average_error_prob, baseline_error_prob
from src.errors import RelaySimError
from src.figures import Dataset, FigureSpec, run_figure, write_csv
from src.protocols import (GainModel, ProtocolKind, Variant, build_schedule, fixed_gain, round_half_away,
                           type2_gain_schedule)
from src.simulator import TRACE_COLUMNS, monte_carlo_ber

logger = logging.getLogger(__name__)

BER_MODES = ("analytic", "simulate", "both")
KOPT_MODES = ("per-interval", "fixed")


def load_experiment(args):
    """ExperimentConfig from --config (or the defaults) with command-line overrides applied."""
    experiment = config.load_config(args.config) if args.config else config.ExperimentConfig()
    if args.paper_scale:
        experiment = experiment.full_scale()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        experiment = experiment.replace(**overrides)
    if getattr(args, "protocol", None):
        experiment = experiment.replace(system=experiment.system.replace(protocol=args.protocol))
    return experiment


def save_effective_config(experiment, name):
    """Writes the configuration a run actually used next to its results."""
    path = os.path.join(experiment.out_dir, f"{name}_config.txt")
    os.makedirs(experiment.out_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(config.format_config(experiment))
    return path


def run_ber(experiment, protocol=None, mode="both", seed=None, analysis_mode=config.DEFAULT_ANALYSIS_MODE,
            trace=False, progress=False):
    """Average error probability and/or simulated BER of one protocol. Returns (summary, intervals, trace)."""
    if mode not in BER_MODES:
        raise RelaySimError(f"unknown mode '{mode}', expected one of {BER_MODES}")
    system = experiment.system
    seed = experiment.seed if seed is None else seed
    protocol = ProtocolKind.from_key(protocol or system.protocol, system.relay_emission)
    system = system.replace(protocol=protocol.key)

    relay_budget = None
    if not protocol.has_relay:
        # The baseline gets the emission budget the fixed-gain relay would spend
        reference = system.replace(protocol=Variant.FIXED_GAIN_AF.value)
        reference_report = average_error_prob(Variant.FIXED_GAIN_AF.value, reference, experiment.sequence_samples,
                                              seed, mode=analysis_mode, gain_samples=experiment.gain_samples)
        relay_budget = reference_report.mean_relay_emission
        logger.info("Baseline budget from the fixed-gain relay: N_A2 = %.1f per bit", relay_budget)
    schedule = build_schedule(protocol, system, experiment.gain_samples, seed)

    summary = Dataset(("protocol", "analysis_mode", "pe_analytic", "ber_simulated", "ber_ci95", "errors", "bits",
                       "trials", "relay_budget", "seed"))
    intervals = Dataset(("j", "pe_given_1", "pe_given_0", "pe"))
    trace_data = Dataset(TRACE_COLUMNS)

    report = None
    if mode in ("analytic", "both"):
        if protocol.has_relay:
            report = average_error_prob(protocol, system, experiment.sequence_samples, seed, mode=analysis_mode,
                                        schedule=schedule)
            relay_budget = report.mean_relay_emission
        else:
            report = baseline_error_prob(system, experiment.sequence_samples, seed, relay_budget=relay_budget)
        for row in report.rows():
            intervals.add(*row)
        print(f"{protocol.ui_name}: average Pe = {report.overall:.6e} "
              f"({experiment.sequence_samples} sequences, {report.mode} mode)")

    estimate = None
    if mode in ("simulate", "both"):
        simulated_system = system
        if not protocol.has_relay:
            simulated_system = system.replace(n_a1=int(round_half_away(system.n_a1 + 2.0 * relay_budget)))
        estimate = monte_carlo_ber(simulated_system, protocol, experiment.trials, seed, schedule=schedule,
                                   workers=experiment.workers, collect_trace=trace, progress=progress)
        if protocol.has_relay:
            relay_budget = estimate.mean_relay_emission
        for row in estimate.trace:
            trace_data.add(*row)
        print(f"{protocol.ui_name}: simulated BER = {estimate.ber:.6e} +- {estimate.ci95:.2e} "
              f"(95% Wilson, {estimate.errors}/{estimate.bits} bits, {estimate.trials} trials)")

    summary.add(protocol.key, analysis_mode if report else None, report.overall if report else None,
                estimate.ber if estimate else None, estimate.ci95 if estimate else None,
                estimate.errors if estimate else None, estimate.bits if estimate else None,
                experiment.trials if estimate else None, relay_budget, seed)
    return summary, intervals, trace_data


def run_kopt(experiment, mode="per-interval", seed=None):
    """Type-2 gain schedule k_bar[j] or the single averaged fixed gain, as a Dataset."""
    if mode not in KOPT_MODES:
        raise RelaySimError(f"unknown mode '{mode}', expected one of {KOPT_MODES}")
    system = experiment.system
    seed = experiment.seed if seed is None else seed
    hops = (system.first_hop, system.second_hop)
    model = GainModel.from_config(system)
    if mode == "fixed":
        k = fixed_gain(system.source_model, system.detection, hops, system.scheme, experiment.gain_samples, seed,
                       system.k_max, model=model)
        print(f"Fixed gain (average optimal gain): k = {k}")
        data = Dataset(("k_fixed",))
        data.add(k)
        return data

    schedule = type2_gain_schedule(system.source_model, system.detection, hops, system.scheme,
                                   experiment.gain_samples, seed, system.k_max, model=model)
    data = Dataset(("j", "k_bar", "degenerate"))
    for index, (k, degenerate) in enumerate(zip(schedule.gains, schedule.degenerate)):
        data.add(index + 2, int(k), degenerate)
    print(f"Per-interval gains for j = 2..{len(schedule.gains) + 1}: "
          f"first {int(schedule.gains[0])}, last {int(schedule.gains[-1])}")
    return data


def _common_arguments():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment configuration file (key = value with units).")
    common.add_argument("--seed", type=int, default=None, help="Master seed; identical seeds give identical files.")
    common.add_argument("--trials", type=int, default=None, help="Simulated trials per point.")
    common.add_argument("--out", default=None, help="Output directory for CSV files.")
    common.add_argument("--paper-scale", action="store_true",
                        help=f"Use {config.FULL_SCALE_TRIALS} trials and {config.FULL_SCALE_SEQUENCE_SAMPLES} sequences.")
    common.add_argument("--workers", type=int, default=None, help="Worker processes for simulated trials.")
    common.add_argument("--analysis-mode", choices=config.ANALYSIS_MODES, default=config.DEFAULT_ANALYSIS_MODE,
                        help="Relay counts in the semi-analytic model: one Poisson realization or the means.")
    common.add_argument("--verbose", action="store_true", help="Debug logging and progress bars.")
    return common


def build_parser():
    common = _common_arguments()
    parser = argparse.ArgumentParser(prog="python -m src",
                                     description="Two-hop diffusion-based molecular relay simulator.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for figure_id, figure in config.FIGURE_TYPES.items():
        sub = subparsers.add_parser(figure_id, parents=[common], help=figure["ui_name"])
        sub.add_argument("--no-simulate", action="store_true", help="Semi-analytic curves only.")

    ber = subparsers.add_parser("ber", parents=[common], help="Average Pe and/or simulated BER of one protocol.")
    ber.add_argument("--protocol", choices=sorted(config.PROTOCOL_TYPES), default=None)
    ber.add_argument("--mode", choices=BER_MODES, default="both")
    ber.add_argument("--trace", action="store_true", help="Also write one row per simulated (trial, interval).")

    kopt = subparsers.add_parser("kopt", parents=[common], help="Optimal gain table.")
    kopt.add_argument("--mode", choices=KOPT_MODES, default="per-interval")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s [%(levelname)s] [%(name)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S")
    try:
        experiment = load_experiment(args)
        out_dir = experiment.out_dir
        if args.command in config.FIGURE_TYPES:
            spec = FigureSpec.from_key(args.command, experiment.system.seq_len)
            data = run_figure(spec, experiment, simulate=not args.no_simulate, mode=args.analysis_mode)
            path = write_csv(data, os.path.join(out_dir, f"{args.command}.csv"))
            print(f"{args.command}: {len(data.rows)} rows written to {path}")
        elif args.command == "ber":
            summary, intervals, trace = run_ber(experiment, args.protocol, args.mode, analysis_mode=args.analysis_mode,
                                                trace=args.trace, progress=args.verbose)
            name = f"ber_{experiment.system.protocol.lower()}"
            write_csv(summary, os.path.join(out_dir, f"{name}.csv"))
            if intervals.rows:
                write_csv(intervals, os.path.join(out_dir, f"{name}_intervals.csv"))
            if args.trace:
                write_csv(trace, os.path.join(out_dir, f"{name}_trace.csv"))
        else:
            data = run_kopt(experiment, args.mode)
            write_csv(data, os.path.join(out_dir, f"kopt_{args.mode.replace('-', '_')}.csv"))
        save_effective_config(experiment, args.command)
    except RelaySimError as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
