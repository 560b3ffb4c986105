# Semi-analytic expected error probability of the two-hop link
#
# The relay count of interval i is Poisson with mean N_A1 * sum_w W[w] * s_SR[i - w]. The
# destination count deciding bit j (observed in interval j + 1) is Poisson with mean
# sum_{i <= j} k[i + 1] * gamma_i * s_RD[j - i], where gamma_i is either one sampled relay
# count ("realization" mode) or its mean ("mean" mode). Sequences are evaluated in batches:
# one row per sampled source sequence, one column per interval.

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from src import config
from src import rng
from src.channel import hit_sums, poisson_tail_below
from src.errors import ConfigError, DomainError, InvalidProtocolError
from src.protocols import (AmplificationSchedule, GainModel, ProtocolKind, Variant, build_schedule,
                           check_schedule)

logger = logging.getLogger(__name__)


class Provenance(enum.Enum):
    SAMPLED = "sampled-realization"
    MEAN = "deterministic-mean"


@dataclass(frozen=True, eq=False)
class ObservedCountVector:
    """Relay counts gamma_1..gamma_j, either one Poisson realization or the means."""
    counts: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 1:
            raise DomainError("observed counts must be a 1-D vector")
        if np.any(~np.isfinite(counts)) or np.any(counts < 0):
            raise DomainError("observed counts must be finite and >= 0")
        if self.provenance == Provenance.SAMPLED and np.any(counts != np.round(counts)):
            raise DomainError("sampled counts must be integers")
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return self.counts.shape[0]


@dataclass(frozen=True)
class IsiDecomposition:
    second_hop_isi: float
    amplified_first_hop_isi: float
    current_bit_term: float

    @property
    def total(self):
        return self.second_hop_isi + self.amplified_first_hop_isi + self.current_bit_term


@dataclass(frozen=True)
class IntervalError:
    j: int
    pe_given_1: float
    pe_given_0: float
    pe: float


@dataclass(frozen=True)
class ErrorProbabilityReport:
    protocol: str
    mode: str
    per_interval: tuple
    overall: float
    n_sequence_samples: int
    seed: int
    mean_relay_emission: float = 0.0

    def rows(self):
        """(j, Pe|1, Pe|0, Pe) tuples in interval order."""
        return [(e.j, e.pe_given_1, e.pe_given_0, e.pe) for e in self.per_interval]


def _bits(sequence):
    bits = np.asarray(getattr(sequence, "bits", sequence), dtype=float)
    if bits.ndim != 1:
        raise DomainError("a bit sequence must be 1-D")
    if np.any((bits != 0) & (bits != 1)):
        raise DomainError("bit sequences hold only 0 and 1")
    return bits


def _lower_triangular(sums, length):
    """matrix[j, i] = sums[j - i] for i <= j, so that bits @ matrix.T convolves causally."""
    return toeplitz(sums[:length], np.zeros(length))


def _history_matrix(sums, length):
    matrix = _lower_triangular(sums, length)
    np.fill_diagonal(matrix, 0.0)
    return matrix


def _gain_vector(gains, j):
    """k[2..j+1] as an array of length j from a scalar, an array or a non-online schedule."""
    if isinstance(gains, AmplificationSchedule):
        if gains.mode == "online":
            raise DomainError("an online schedule has no fixed gain vector; it depends on relay decisions")
        if gains.mode == "fixed":
            return np.full(j, gains.gains[0])
        values = np.asarray(gains.gains, dtype=float)
    elif np.ndim(gains) == 0:
        return np.full(j, float(gains))
    else:
        values = np.asarray(gains, dtype=float)
    if values.shape[0] < j:
        raise DomainError(f"need gains k[2..{j + 1}], got {values.shape[0]} values")
    if np.any(values < 0):
        raise DomainError("gains must be >= 0")
    return values[:j]


def first_hop_means(sequence, source, first_hop, scheme):
    """Mean relay weighted sum for each interval 1..j of the source sequence."""
    bits = _bits(sequence)
    j = bits.shape[0]
    if j == 0:
        return np.zeros(0)
    sums = hit_sums(first_hop, scheme, j)
    return source.n_a1 * (_lower_triangular(sums, j) @ bits)


def sample_first_hop_realization(means, seed):
    """One independent Poisson draw per interval."""
    means = np.asarray(means, dtype=float)
    if np.any(~np.isfinite(means)) or np.any(means < 0):
        raise DomainError("Poisson means must be finite and >= 0")
    generator = rng.as_generator(seed, rng.TAG_REALIZATION)
    return ObservedCountVector(generator.poisson(means).astype(float), Provenance.SAMPLED)


def second_hop_mean(observed, gains, second_hop, scheme, j):
    """Destination mean in interval j + 1 given relay counts gamma_1..gamma_j and gains k[2..j+1]."""
    if j < 1:
        raise DomainError(f"interval index must be >= 1, got {j}")
    counts = observed.counts if isinstance(observed, ObservedCountVector) else np.asarray(observed, dtype=float)
    if counts.shape[0] < j:
        raise DomainError(f"need {j} relay counts, got {counts.shape[0]}")
    g = _gain_vector(gains, j)
    sums = hit_sums(second_hop, scheme, j)
    return float(np.dot(g * counts[:j], sums[j - 1::-1]))


def isi_decompose(sequence, gains, hops, scheme, source):
    """Splits the mean destination count for the last bit of `sequence` into its three parts.

    second_hop_isi: relay emissions of earlier intervals still seen at the destination.
    amplified_first_hop_isi: first-hop ISI the relay observed with the current bit, times k.
    current_bit_term: the current bit itself through both hops, times k.
    """
    bits = _bits(sequence)
    j = bits.shape[0]
    if j == 0:
        raise DomainError("need at least one bit")
    first_hop, second_hop = hops
    g = _gain_vector(gains, j)
    sr = hit_sums(first_hop, scheme, j)
    rd = hit_sums(second_hop, scheme, j)
    means = first_hop_means(bits, source, first_hop, scheme)

    second_isi = float(np.dot(g[:j - 1] * means[:j - 1], rd[j - 1:0:-1]))
    first_isi = source.n_a1 * float(np.dot(bits[:j - 1], sr[j - 1:0:-1]))
    amplified = g[j - 1] * first_isi * rd[0]
    current = g[j - 1] * source.n_a1 * bits[j - 1] * sr[0] * rd[0]
    return IsiDecomposition(second_isi, amplified, current)


class _Batch:
    """Hop tables and source sequences for one evaluation (rows = sequences, columns = intervals)."""

    def __init__(self, system_config, bits):
        cfg = system_config
        self.cfg = cfg
        self.bits = np.atleast_2d(np.asarray(bits, dtype=float))
        length = self.bits.shape[1]
        scheme = cfg.scheme

        sr = hit_sums(cfg.first_hop, scheme, length)
        rd = hit_sums(cfg.second_hop, scheme, length)
        self.current_unit = cfg.n_a1 * sr[0]
        self.rd0 = rd[0]
        self.second_matrix = _lower_triangular(rd, length)
        # Mean first-hop ISI seen by the relay in each interval (excluding the current bit)
        self.isi_means = cfg.n_a1 * (self.bits @ _history_matrix(sr, length).T)

    def relay_counts(self, generator_for_row):
        """One Poisson realization split into ISI and current-bit parts, per row."""
        isi = np.empty_like(self.bits)
        current = np.empty_like(self.bits)
        for row in range(self.bits.shape[0]):
            generator = generator_for_row(row)
            isi[row] = generator.poisson(self.isi_means[row])
            current[row] = generator.poisson(self.current_unit, self.bits.shape[1])
        return isi, current

    def destination_af(self, gains, isi, current):
        """Destination means under current bit 0 and 1 for AF relaying."""
        gamma = isi + self.bits * current
        full = (gains * gamma) @ self.second_matrix.T
        lam0 = np.maximum(full - gains * self.bits * current * self.rd0, 0.0)
        lam1 = lam0 + gains * current * self.rd0
        return lam0, lam1, gains * gamma


def _tail_pair(xi_d, lam0, lam1):
    """(Pe|1, Pe|0) for the threshold detector given the two hypothesis means."""
    pe1 = poisson_tail_below(xi_d, lam1)
    pe0 = 1.0 - poisson_tail_below(xi_d, lam0)
    return np.asarray(pe1, dtype=float), np.asarray(pe0, dtype=float)


def _draw_sequences(source, n_sequence_samples, seed, length):
    bits = np.empty((n_sequence_samples, length))
    for s in range(n_sequence_samples):
        bits[s] = source.draw_bits(rng.make_stream(seed, rng.TAG_SEQUENCE, s), length)
    return bits


def _evaluate_relay(batch, protocol, schedule, mode, seed, draws):
    """Per-sequence Pe|1, Pe|0 and relay emissions, averaged over realization draws."""
    cfg = batch.cfg
    det = cfg.detection
    n_rows, length = batch.bits.shape
    type1 = protocol.variant == Variant.VARIABLE_GAIN_AF_TYPE1
    model = GainModel.from_config(cfg) if type1 else None
    # Mean mode only samples relay counts to drive the Type-1 relay decisions
    sampled = mode == "realization" or type1
    draws = draws if sampled else 1

    pe1_sum = np.zeros((n_rows, length))
    pe0_sum = np.zeros((n_rows, length))
    emission_sum = np.zeros((n_rows, length))
    for r in range(draws):
        if sampled:
            isi, current = batch.relay_counts(lambda row: rng.make_stream(seed, rng.TAG_REALIZATION, row, r))
            sampled_gamma = isi + batch.bits * current
        else:
            sampled_gamma = None
        if mode == "mean":
            isi, current = batch.isi_means, np.full_like(batch.bits, batch.current_unit)

        if protocol.variant == Variant.DECODE_FORWARD:
            pe1, pe0, emitted = _evaluate_df(batch, protocol.df_emission, det, mode, isi, current)
        else:
            if type1:
                estimates = (sampled_gamma >= det.xi_r).astype(float)
                gains, _ = model.gains_along(estimates)
            else:
                gains = _gain_vector(schedule, length)[None, :]
            lam0, lam1, emitted = batch.destination_af(gains, isi, current)
            pe1, pe0 = _tail_pair(det.xi_d, lam0, lam1)

        pe1_sum += pe1
        pe0_sum += pe0
        emission_sum += emitted
    return pe1_sum / draws, pe0_sum / draws, emission_sum / draws


def _evaluate_df(batch, emission, det, mode, isi, current):
    """Simplified DF: relay decisions enter as expected (mean) or sampled emissions.

    q_b is the chance that the relay decides 1 when the current bit is b. In mean mode it
    mixes over the Poisson relay count; in realization mode the sampled ISI and current-bit
    counts settle it, as they do for AF."""
    if mode == "mean":
        q0 = 1.0 - np.asarray(poisson_tail_below(det.xi_r, isi))
        q1 = 1.0 - np.asarray(poisson_tail_below(det.xi_r, isi + current))
    else:
        q0 = (isi >= det.xi_r).astype(float)
        q1 = (isi + current >= det.xi_r).astype(float)
    emitted = emission * np.where(batch.bits == 1, q1, q0)
    full = emitted @ batch.second_matrix.T
    base = np.maximum(full - emitted * batch.rd0, 0.0)
    boosted = base + emission * batch.rd0

    below_base = np.asarray(poisson_tail_below(det.xi_d, base))
    below_boosted = np.asarray(poisson_tail_below(det.xi_d, boosted))
    pe1 = q1 * below_boosted + (1.0 - q1) * below_base
    pe0 = 1.0 - (q0 * below_boosted + (1.0 - q0) * below_base)
    return pe1, pe0, emitted


def _report(protocol_key, mode, pe1, pe0, p1, n_sequence_samples, seed, emissions=None):
    avg1 = pe1.mean(axis=0)
    avg0 = pe0.mean(axis=0)
    per_interval = []
    for j in range(avg1.shape[0]):
        pe = p1 * avg1[j] + (1.0 - p1) * avg0[j]
        per_interval.append(IntervalError(j + 1, float(avg1[j]), float(avg0[j]), float(pe)))
    overall = math.fsum(e.pe for e in per_interval) / len(per_interval)
    mean_emission = float(emissions.mean()) if emissions is not None else 0.0
    return ErrorProbabilityReport(protocol_key, mode, tuple(per_interval), overall,
                                  n_sequence_samples, seed, mean_emission)


def _check_mode(mode):
    if mode not in config.ANALYSIS_MODES:
        raise ConfigError(f"unknown analysis mode '{mode}', expected one of {config.ANALYSIS_MODES}")


def expected_error_prob(j, prefix, gains, system_config, mode=config.DEFAULT_ANALYSIS_MODE,
                        seed=config.DEFAULT_SEED, draws=None):
    """(Pe|1, Pe|0, Pe) of bit j after the source prefix W(1..j-1) for AF relaying with gains k[2..j+1].

    In realization mode the result is averaged over `draws` relay realizations
    (system_config.realization_draws by default).
    """
    _check_mode(mode)
    cfg = system_config
    prefix_bits = _bits(prefix)
    if j < 1 or prefix_bits.shape[0] != j - 1:
        raise DomainError(f"bit {j} needs a prefix of {j - 1} bits, got {prefix_bits.shape[0]}")
    draws = cfg.realization_draws if draws is None else draws
    if draws < 1:
        raise DomainError("draws must be >= 1")

    batch = _Batch(cfg, np.append(prefix_bits, 0.0))
    g = _gain_vector(gains, j)[None, :]
    xi_d = cfg.xi_d
    if mode == "mean":
        lam0, lam1, _ = batch.destination_af(g, batch.isi_means, np.full_like(batch.bits, batch.current_unit))
        pe1, pe0 = _tail_pair(xi_d, lam0[0, -1], lam1[0, -1])
    else:
        pe1 = pe0 = 0.0
        for r in range(draws):
            isi, current = batch.relay_counts(lambda row: rng.make_stream(seed, rng.TAG_REALIZATION, row, r))
            lam0, lam1, _ = batch.destination_af(g, isi, current)
            one, zero = _tail_pair(xi_d, lam0[0, -1], lam1[0, -1])
            pe1 += one / draws
            pe0 += zero / draws
    pe1, pe0 = float(pe1), float(pe0)
    return pe1, pe0, cfg.p1 * pe1 + (1.0 - cfg.p1) * pe0


def average_error_prob(protocol, system_config, n_sequence_samples, seed, mode=config.DEFAULT_ANALYSIS_MODE,
                       schedule=None, relay_budget=None, gain_samples=config.DEFAULT_GAIN_SAMPLES):
    """Expected error probability averaged over random source sequences and intervals 1..L."""
    _check_mode(mode)
    if n_sequence_samples < 1:
        raise DomainError(f"n_sequence_samples must be >= 1, got {n_sequence_samples}")
    if not isinstance(protocol, ProtocolKind):
        protocol = ProtocolKind.from_key(protocol, system_config.relay_emission)
    cfg = system_config.replace(protocol=protocol.key)
    if not protocol.has_relay:
        return baseline_error_prob(cfg, n_sequence_samples, seed, relay_budget=relay_budget)

    if schedule is None:
        schedule = build_schedule(protocol, cfg, gain_samples, seed)
    check_schedule(protocol, schedule)

    bits = _draw_sequences(cfg.source_model, n_sequence_samples, seed, cfg.seq_len)
    batch = _Batch(cfg, bits)
    pe1, pe0, emissions = _evaluate_relay(batch, protocol, schedule, mode, seed, cfg.realization_draws)
    report = _report(protocol.key, mode, pe1, pe0, cfg.p1, n_sequence_samples, seed, emissions)
    logger.info("%s (%s mode): average Pe = %.4e over %d sequences, mean relay emission %.1f",
                protocol.ui_name, mode, report.overall, n_sequence_samples, report.mean_relay_emission)
    return report


def baseline_error_prob(system_config, n_sequence_samples, seed, relay_budget=None):
    """Direct S -> D link with the emission boosted to N_A1 + 2 * relay_budget per bit 1.

    The destination counts source molecules and decides bit j at the end of interval j.
    """
    if relay_budget is None:
        raise ConfigError("the baseline needs the mean relay emission per bit (N_A2) of the relay protocol "
                          "it is compared with", field="relay_budget")
    if relay_budget < 0:
        raise ConfigError(f"relay budget must be >= 0, got {relay_budget}", field="relay_budget")
    if n_sequence_samples < 1:
        raise DomainError(f"n_sequence_samples must be >= 1, got {n_sequence_samples}")
    cfg = system_config
    emission = cfg.n_a1 + 2.0 * relay_budget
    length = cfg.seq_len
    sd = hit_sums(cfg.direct_link, cfg.scheme, length)
    bits = _draw_sequences(cfg.source_model, n_sequence_samples, seed, length)

    lam0 = emission * (bits @ _history_matrix(sd, length).T)
    lam1 = lam0 + emission * sd[0]
    pe1, pe0 = _tail_pair(cfg.xi_d, lam0, lam1)
    report = _report(Variant.BASELINE.value, "exact", pe1, pe0, cfg.p1, n_sequence_samples, seed)
    logger.info("Baseline with %.1f molecules per bit: average Pe = %.4e", emission, report.overall)
    return report


def relay_budget_estimate(report):
    """Mean relay emission per bit from an analytic relay report, usable as the baseline budget."""
    if report.protocol == Variant.BASELINE.value:
        raise InvalidProtocolError("the baseline has no relay emissions")
    return report.mean_relay_emission
