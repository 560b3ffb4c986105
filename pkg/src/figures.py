# Figure sweeps and CSV output
#
# Each figure id in config.FIGURE_TYPES maps to a runner producing a Dataset: a header
# naming the columns (with units) and rows ordered by parameter set, then sweep index.

import csv
import dataclasses
import logging
import os

import numpy as np

from src import config
from src.analysis import average_error_prob, baseline_error_prob, expected_error_prob
from src.errors import ConfigError
from src.protocols import (AmplificationSchedule, GainModel, ProtocolKind, Variant, build_schedule,
                           round_half_away, type2_gain_schedule)
from src.simulator import monte_carlo_ber, monte_carlo_bit_error

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class FigureSpec:
    figure_id: str
    sweep_axis: str
    sweep_values: tuple
    protocols: tuple
    parameter_sets: tuple
    prefix: str = None

    def __post_init__(self):
        if self.figure_id not in config.FIGURE_TYPES:
            raise ConfigError(f"unknown figure id '{self.figure_id}', expected one of {sorted(config.FIGURE_TYPES)}")
        values = tuple(self.sweep_values)
        if not values:
            raise ConfigError(f"{self.figure_id}: sweep values must not be empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"{self.figure_id}: sweep values must be strictly increasing")
        object.__setattr__(self, "sweep_values", values)

    @classmethod
    def from_key(cls, figure_id, seq_len=config.DEFAULT_SEQ_LEN):
        figure = config.FIGURE_TYPES.get(figure_id)
        if figure is None:
            raise ConfigError(f"unknown figure id '{figure_id}', expected one of {sorted(config.FIGURE_TYPES)}")
        values = figure["sweep_values"]
        if values is None:
            values = range(2, seq_len + 2)  # gains k[2..L+1]
        return cls(figure_id, figure["sweep_axis"], tuple(values), tuple(figure["protocols"]),
                   tuple(figure["parameter_sets"]), figure.get("prefix"))


@dataclasses.dataclass
class Dataset:
    header: tuple
    rows: list = dataclasses.field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.header):
            raise ValueError(f"row has {len(row)} cells, header has {len(self.header)}")
        self.rows.append(row)

    def column(self, name):
        index = self.header.index(name)
        return [row[index] for row in self.rows]


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{config.CSV_SIGNIFICANT_DIGITS}g}"
    return str(value)


def write_csv(dataset, path):
    """Comma-separated, UTF-8, LF line endings."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(dataset.header)
        for row in dataset.rows:
            writer.writerow([format_cell(v) for v in row])
    logger.info("Wrote %d rows to %s", len(dataset.rows), path)
    return path


def _apply(system, parameter_set):
    overrides = {k: v for k, v in parameter_set.items() if k in config.SYSTEM_FIELDS}
    return system.replace(**overrides)


def _simulated(estimate):
    return (None, None) if estimate is None else (estimate.ber, estimate.ci95)


def _fig2(spec, experiment, seed, simulate, mode):
    prefix = np.array([int(c) for c in spec.prefix], dtype=np.int8)
    j = prefix.shape[0] + 1
    system = _apply(experiment.system, spec.parameter_sets[0]).replace(
        seq_len=j, protocol=Variant.FIXED_GAIN_AF.value)
    k_opt = GainModel.from_config(system.replace(isi_aware_gain=False)).optimal_gain(prefix)
    k_opt_isi = GainModel.from_config(system.replace(isi_aware_gain=True)).optimal_gain(prefix)
    logger.info("Closed-form optimal gain after prefix %s: k = %d (%d with the relay's own ISI)",
                spec.prefix, k_opt, k_opt_isi)

    data = Dataset(("k", "pe_mean", "pe_realization", "ber_simulated", "ber_ci95", "k_opt", "k_opt_isi"))
    for k in spec.sweep_values:
        _, _, pe_mean = expected_error_prob(j, prefix, k, system, mode="mean", seed=seed)
        _, _, pe_real = expected_error_prob(j, prefix, k, system, mode="realization", seed=seed)
        estimate = None
        if simulate:
            schedule = AmplificationSchedule.fixed(k, system.k_max)
            estimate = monte_carlo_bit_error(system, prefix, experiment.trials, seed, schedule=schedule,
                                             workers=experiment.workers)
        data.add(k, pe_mean, pe_real, *_simulated(estimate), k_opt, k_opt_isi)
    return data


def _fig3(spec, experiment, seed, simulate, mode):
    data = Dataset(("set", "samples_per_bit", "bit_interval_s", "xi_d", "j", "k_bar", "degenerate", "k_fixed"))
    for index, parameter_set in enumerate(spec.parameter_sets):
        system = _apply(experiment.system, parameter_set)
        schedule = type2_gain_schedule(system.source_model, system.detection, (system.first_hop, system.second_hop),
                                       system.scheme, experiment.gain_samples, seed, system.k_max)
        gains = np.asarray(schedule.gains)
        live = gains[~np.asarray(schedule.degenerate, dtype=bool)]
        k_fixed = int(round_half_away(live.mean())) if live.size else system.k_max
        for j in spec.sweep_values:
            if j - 2 >= gains.shape[0]:
                break
            data.add(index + 1, system.samples_per_bit, system.bit_interval, system.xi_d, j,
                     gains[j - 2], schedule.degenerate[j - 2], k_fixed)
    return data


def _fig4(spec, experiment, seed, simulate, mode):
    data = Dataset(("set", "samples_per_bit", "bit_interval_s", "xi_d", "k", "pe_analytic", "ber_simulated",
                    "ber_ci95"))
    protocol = ProtocolKind.from_key(Variant.FIXED_GAIN_AF.value)
    for index, parameter_set in enumerate(spec.parameter_sets):
        system = _apply(experiment.system, parameter_set).replace(protocol=protocol.key)
        for k in spec.sweep_values:
            schedule = AmplificationSchedule.fixed(k, system.k_max)
            report = average_error_prob(protocol, system, experiment.sequence_samples, seed, mode=mode,
                                        schedule=schedule)
            estimate = None
            if simulate:
                estimate = monte_carlo_ber(system, protocol, experiment.trials, seed, schedule=schedule,
                                           workers=experiment.workers)
            data.add(index + 1, system.samples_per_bit, system.bit_interval, system.xi_d, k, report.overall,
                     *_simulated(estimate))
    return data


def _relay_then_baseline(system, relay_key, experiment, seed, simulate, mode, schedule=None):
    """Relay protocol point, then the baseline at the matched emission budget N_A1 + 2 * N_A2."""
    relay = ProtocolKind.from_key(relay_key, system.relay_emission)
    system = system.replace(protocol=relay.key)
    if schedule is None:
        schedule = build_schedule(relay, system, experiment.gain_samples, seed)
    report = average_error_prob(relay, system, experiment.sequence_samples, seed, mode=mode, schedule=schedule)
    estimate = None
    budget = report.mean_relay_emission
    if simulate:
        estimate = monte_carlo_ber(system, relay, experiment.trials, seed, schedule=schedule,
                                   workers=experiment.workers)
        budget = estimate.mean_relay_emission

    baseline_system = system.replace(protocol=Variant.BASELINE.value)
    baseline_report = baseline_error_prob(baseline_system, experiment.sequence_samples, seed, relay_budget=budget)
    baseline_estimate = None
    if simulate:
        boosted = baseline_system.replace(n_a1=int(round_half_away(system.n_a1 + 2.0 * budget)))
        baseline_estimate = monte_carlo_ber(boosted, Variant.BASELINE.value, experiment.trials, seed,
                                            workers=experiment.workers)
    return (report, estimate), (baseline_report, baseline_estimate), budget


def _fig5(spec, experiment, seed, simulate, mode):
    data = Dataset(("set", "bit_interval_s", "k", "xi_d", "protocol", "relay_budget", "pe_analytic",
                    "ber_simulated", "ber_ci95"))
    for index, parameter_set in enumerate(spec.parameter_sets):
        base = _apply(experiment.system, parameter_set)
        if base.gain is None:
            raise ConfigError(f"{spec.figure_id} parameter set {index + 1} needs a fixed gain", field="gain")
        for xi_d in spec.sweep_values:
            system = base.replace(xi_d=xi_d)
            schedule = AmplificationSchedule.fixed(system.gain, system.k_max)
            relay, baseline, budget = _relay_then_baseline(system, Variant.FIXED_GAIN_AF.value, experiment, seed,
                                                           simulate, mode, schedule)
            for key, (report, estimate) in ((Variant.FIXED_GAIN_AF.value, relay), (Variant.BASELINE.value, baseline)):
                if key in spec.protocols:
                    data.add(index + 1, system.bit_interval, system.gain, xi_d, key, budget, report.overall,
                             *_simulated(estimate))
    return data


def _fig6(spec, experiment, seed, simulate, mode):
    data = Dataset(("bit_interval_s", "protocol", "relay_budget", "pe_analytic", "ber_simulated", "ber_ci95"))
    base = _apply(experiment.system, spec.parameter_sets[0])
    for bit_interval in spec.sweep_values:
        system = base.replace(bit_interval=bit_interval)
        for key in spec.protocols:
            if key == Variant.BASELINE.value:
                continue
            if key == Variant.FIXED_GAIN_AF.value and Variant.BASELINE.value in spec.protocols:
                relay, baseline, budget = _relay_then_baseline(system, key, experiment, seed, simulate, mode)
                data.add(bit_interval, key, budget, relay[0].overall, *_simulated(relay[1]))
                data.add(bit_interval, Variant.BASELINE.value, budget, baseline[0].overall, *_simulated(baseline[1]))
                continue
            protocol = ProtocolKind.from_key(key, system.relay_emission)
            point = system.replace(protocol=key)
            schedule = build_schedule(protocol, point, experiment.gain_samples, seed)
            report = average_error_prob(protocol, point, experiment.sequence_samples, seed, mode=mode,
                                        schedule=schedule)
            estimate = None
            if simulate:
                estimate = monte_carlo_ber(point, protocol, experiment.trials, seed, schedule=schedule,
                                           workers=experiment.workers)
            budget = estimate.mean_relay_emission if estimate else report.mean_relay_emission
            data.add(bit_interval, key, budget, report.overall, *_simulated(estimate))
    return data


FIGURE_RUNNERS = {
    "fig2": _fig2,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig6": _fig6,
}


def run_figure(spec, experiment, seed=None, simulate=True, mode=config.DEFAULT_ANALYSIS_MODE):
    """Runs one figure sweep and returns its Dataset."""
    if not isinstance(spec, FigureSpec):
        spec = FigureSpec.from_key(spec, experiment.system.seq_len)
    runner = FIGURE_RUNNERS.get(spec.figure_id)
    if runner is None:
        raise ConfigError(f"unknown figure id '{spec.figure_id}'")
    seed = experiment.seed if seed is None else seed
    logger.info("Running %s (%s), %d sweep points, simulation %s", spec.figure_id,
                config.FIGURE_TYPES[spec.figure_id]["ui_name"], len(spec.sweep_values), "on" if simulate else "off")
    return runner(spec, experiment, seed, simulate, mode)
