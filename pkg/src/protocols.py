# Source, relay and destination behaviour: threshold detection, relay amplification
# (fixed gain, Type-1 / Type-2 variable gain, simplified DF) and the closed-form optimal gain.

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from src import config
from src import rng
from src.channel import hit_sums
from src.errors import ConfigError, DomainError, InvalidProtocolError, UnsupportedConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SourceModel:
    p1: float
    n_a1: int
    seq_len: int

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise DomainError(f"p1 must lie in [0, 1], got {self.p1}")
        if self.n_a1 < 0 or int(self.n_a1) != self.n_a1:
            raise DomainError(f"n_a1 must be a nonnegative integer, got {self.n_a1}")
        if self.seq_len < 1:
            raise DomainError(f"seq_len must be >= 1, got {self.seq_len}")

    @property
    def p0(self):
        return 1.0 - self.p1

    def draw_bits(self, generator, length=None):
        """i.i.d. bits with P(1) = p1."""
        n = self.seq_len if length is None else length
        return (generator.random(n) < self.p1).astype(np.int8)


class BitRole(enum.Enum):
    SOURCE = "W_S"
    RELAY_ESTIMATE = "W_R"
    DESTINATION_DECISION = "W_D"


@dataclass(frozen=True)
class BitSequence:
    bits: tuple
    role: BitRole = BitRole.SOURCE

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise DomainError(f"bit sequences hold only 0 and 1, got {self.bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text, role=BitRole.SOURCE):
        return cls(tuple(int(c) for c in text.strip()), role)

    def __len__(self):
        return len(self.bits)

    def as_array(self):
        return np.asarray(self.bits, dtype=np.int8)

    def __str__(self):
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class DetectionConfig:
    """Decision thresholds. xi_d = 0 is accepted and means the destination always decides 1."""
    xi_d: int
    xi_r: int

    def __post_init__(self):
        if int(self.xi_d) != self.xi_d or self.xi_d < 0:
            raise DomainError(f"xi_d must be a nonnegative integer, got {self.xi_d}")
        if int(self.xi_r) != self.xi_r or self.xi_r < 1:
            raise DomainError(f"xi_r must be a positive integer, got {self.xi_r}")


class Variant(enum.Enum):
    BASELINE = "BASELINE"
    FIXED_GAIN_AF = "FIXED_GAIN_AF"
    VARIABLE_GAIN_AF_TYPE1 = "VARIABLE_GAIN_AF_TYPE1"
    VARIABLE_GAIN_AF_TYPE2 = "VARIABLE_GAIN_AF_TYPE2"
    DECODE_FORWARD = "DECODE_FORWARD"


@dataclass(frozen=True)
class ProtocolKind:
    variant: Variant
    df_emission: int = 0

    def __post_init__(self):
        if self.variant == Variant.DECODE_FORWARD and self.df_emission < 0:
            raise DomainError(f"df_emission must be >= 0, got {self.df_emission}")

    @classmethod
    def from_key(cls, key, df_emission=0):
        try:
            variant = Variant(key)
        except ValueError:
            raise InvalidProtocolError(f"unknown protocol '{key}'") from None
        return cls(variant, df_emission if variant == Variant.DECODE_FORWARD else 0)

    @property
    def key(self):
        return self.variant.value

    @property
    def ui_name(self):
        return config.PROTOCOL_TYPES[self.key]["ui_name"]

    @property
    def has_relay(self):
        return config.PROTOCOL_TYPES[self.key]["has_relay"]

    @property
    def schedule_mode(self):
        return config.PROTOCOL_TYPES[self.key]["schedule_mode"]


@dataclass(frozen=True)
class AmplificationSchedule:
    """Relay gain k[j] for j = 2..L+1.

    fixed: one gain for every interval. per_interval: gains[j - 2] is k[j].
    online: estimator(history) returns k for the relay's own estimated history.
    """
    mode: str
    k_max: int
    gains: tuple = ()
    degenerate: tuple = ()
    estimator: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ("fixed", "per_interval", "online"):
            raise ConfigError(f"unknown schedule mode '{self.mode}'")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1", field="k_max")
        gains = tuple(float(k) for k in self.gains)
        if any(not (0.0 <= k <= self.k_max) for k in gains):
            raise ConfigError(f"gains must lie in [0, {self.k_max}]", field="gain")
        object.__setattr__(self, "gains", gains)
        if self.mode == "fixed" and len(gains) != 1:
            raise ConfigError("a fixed schedule holds exactly one gain")
        if self.mode == "online" and self.estimator is None:
            raise ConfigError("an online schedule needs a gain estimator")
        if not self.degenerate:
            object.__setattr__(self, "degenerate", (False,) * len(gains))

    @classmethod
    def fixed(cls, k, k_max=config.DEFAULT_K_MAX):
        return cls("fixed", max(int(k_max), math.ceil(k)), (k,))

    @classmethod
    def per_interval(cls, gains, k_max=config.DEFAULT_K_MAX, degenerate=()):
        return cls("per_interval", k_max, tuple(gains), tuple(bool(d) for d in degenerate))

    @classmethod
    def online(cls, estimator, k_max=config.DEFAULT_K_MAX):
        return cls("online", k_max, estimator=estimator)

    def gain_for(self, j, history=()):
        """Gain applied to the emission at the start of interval j (j >= 2)."""
        if self.mode == "fixed":
            return self.gains[0]
        if self.mode == "per_interval":
            if not 2 <= j <= len(self.gains) + 1:
                raise DomainError(f"schedule covers intervals 2..{len(self.gains) + 1}, asked for {j}")
            return self.gains[j - 2]
        return self.estimator(history)


def detect(sample_sum, threshold):
    """Weighted-sum threshold decision: 1 if the sum reaches the threshold."""
    return 1 if sample_sum >= threshold else 0


def round_half_away(x):
    """Nearest integer, halves rounded away from zero. Works on scalars and arrays."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def relay_emission_count(k, observed):
    """Molecules released for an observed count: nearest integer to k * observed."""
    if k < 0 or observed < 0:
        raise DomainError(f"gain and observed count must be >= 0, got k={k}, observed={observed}")
    return int(round_half_away(k * observed))


def isi_factor_b(history, current_bit, first_hop, second_hop, scheme):
    """B_b: per-molecule destination mean for the current bit b given the source history.

    history is W(1..j-1); the result sums the first-hop ISI of the history and the
    current bit, each scaled by the second-hop hit sum of the current interval.
    """
    bits = np.asarray(getattr(history, "bits", history), dtype=float)
    if current_bit not in (0, 1):
        raise DomainError(f"current bit must be 0 or 1, got {current_bit}")
    h = bits.shape[0]
    first = hit_sums(first_hop, scheme, h + 1)
    second_now = hit_sums(second_hop, scheme, 1)[0]
    isi = float(np.dot(bits, first[h:0:-1])) if h else 0.0
    return isi * second_now + current_bit * first[0] * second_now


class GainModel:
    """Hop hit sums for one configuration, with batched optimal-gain evaluation.

    With include_second_hop_isi the B-factors also carry what the relay's earlier
    emissions leave at the destination, assuming every earlier interval was forwarded
    with the same gain. The stationary point is then that of the exact mean-count error
    probability of a fixed-gain relay, not only of its current-interval part.
    """

    def __init__(self, source, xi_d, first_hop, second_hop, scheme, k_max=config.DEFAULT_K_MAX,
                 include_second_hop_isi=False):
        self.source = source
        self.xi_d = int(xi_d)
        self.first_hop = first_hop
        self.second_hop = second_hop
        self.scheme = scheme
        self.k_max = int(k_max)
        self.include_second_hop_isi = bool(include_second_hop_isi)
        self.first_sums = hit_sums(first_hop, scheme, source.seq_len + 1)
        self.second_sums = hit_sums(second_hop, scheme, source.seq_len + 1)
        self.current_weight = self.first_sums[0] * self.second_sums[0]

    @classmethod
    def from_config(cls, system_config):
        return cls(system_config.source_model, system_config.xi_d, system_config.first_hop,
                   system_config.second_hop, system_config.scheme, system_config.k_max,
                   system_config.isi_aware_gain)

    def _first_sums(self, n):
        if n > self.first_sums.shape[0]:
            self.first_sums = hit_sums(self.first_hop, self.scheme, n)
        return self.first_sums

    def _second_sums(self, n):
        if n > self.second_sums.shape[0]:
            self.second_sums = hit_sums(self.second_hop, self.scheme, n)
        return self.second_sums

    def second_hop_isi(self, histories):
        """Per-molecule, per-unit-gain destination mean left by the relay's earlier emissions."""
        histories = np.atleast_2d(np.asarray(histories, dtype=float))
        h = histories.shape[1]
        if h == 0:
            return np.zeros(histories.shape[0])
        first = self._first_sums(h)[:h]
        relay_means = histories @ toeplitz(first, np.zeros(h)).T
        return relay_means @ self._second_sums(h + 1)[h:0:-1]

    def b_factors(self, histories):
        """(B0, B1) for each row of a 2-D array of histories."""
        histories = np.atleast_2d(np.asarray(histories, dtype=float))
        h = histories.shape[1]
        if h == 0:
            b0 = np.zeros(histories.shape[0])
        else:
            weights = self._first_sums(h + 1)[h:0:-1]
            b0 = histories @ weights * self.second_sums[0]
            if self.include_second_hop_isi:
                b0 = b0 + self.second_hop_isi(histories)
        return b0, b0 + self.current_weight

    def unclamped_gain(self, b0, b1):
        """Stationary point of the Gamma-relaxed error probability in k (real-valued)."""
        if self.xi_d < 2:
            raise UnsupportedConfigurationError(
                f"the optimal gain is defined for xi_d >= 2, got {self.xi_d}")
        p1, p0 = self.source.p1, self.source.p0
        with np.errstate(divide="ignore", invalid="ignore"):
            numerator = (self.xi_d - 1) * np.log(b1 / b0) + np.log(p1 * b1 / (p0 * b0))
            return numerator / (self.source.n_a1 * (b1 - b0))

    def _clamped(self, b0, b1):
        degenerate = b0 <= 0
        if self.xi_d < 2:
            raise UnsupportedConfigurationError(
                f"the optimal gain is defined for xi_d >= 2, got {self.xi_d}")
        if self.source.p0 == 0 or self.source.n_a1 == 0 or self.current_weight <= 0:
            return np.full(b0.shape, float(self.k_max)), degenerate
        if self.source.p1 == 0:
            return np.ones(b0.shape), degenerate

        gains = np.full(b0.shape, float(self.k_max))
        live = ~degenerate
        if np.any(live):
            raw = self.unclamped_gain(b0[live], b1[live])
            gains[live] = np.clip(round_half_away(raw), 1, self.k_max)
        return gains, degenerate

    def optimal_gains(self, histories):
        """Clamped integer gains and the degenerate (B0 = 0) mask for a batch of histories."""
        return self._clamped(*self.b_factors(histories))

    def optimal_gain(self, history):
        """Integer gain for a single history W(1..j-1)."""
        bits = np.asarray(getattr(history, "bits", history), dtype=float)
        gains, _ = self.optimal_gains(bits.reshape(1, -1))
        return int(gains[0])

    def gains_along(self, bits):
        """Gains applied to each interval of a decided sequence.

        Entry j - 1 is k[j + 1], the gain used to forward bit j given bits[:j - 1] as the
        history. bits may be 1-D or a 2-D batch with one sequence per row.
        """
        bits = np.asarray(bits, dtype=float)
        rows = np.atleast_2d(bits)
        n = rows.shape[1]
        if n == 0:
            return np.zeros(bits.shape), np.zeros(bits.shape, dtype=bool)
        first = self._first_sums(n)[:n]
        history_weights = toeplitz(first, np.zeros(n))
        np.fill_diagonal(history_weights, 0.0)
        b0 = rows @ history_weights.T * self.second_sums[0]
        if self.include_second_hop_isi:
            second = self._second_sums(n)[:n]
            relay_weights = toeplitz(second, np.zeros(n))
            np.fill_diagonal(relay_weights, 0.0)
            b0 = b0 + (rows @ toeplitz(first, np.zeros(n)).T) @ relay_weights.T
        gains, degenerate = self._clamped(b0, b0 + self.current_weight)
        return gains.reshape(bits.shape), degenerate.reshape(bits.shape)


def optimal_gain(history, source, det, hops, scheme, k_max=config.DEFAULT_K_MAX, include_second_hop_isi=False):
    """Closed-form optimal relay gain for the bit following `history`, clamped into [1, k_max]."""
    first_hop, second_hop = hops
    model = GainModel(source, det.xi_d, first_hop, second_hop, scheme, k_max, include_second_hop_isi)
    return model.optimal_gain(history)


def _all_histories(length):
    codes = np.arange(2 ** length, dtype=np.int64)[:, None]
    return ((codes >> np.arange(length)) & 1).astype(np.int8)


def type2_gain_schedule(source, det, hops, scheme, n_samples, seed,
                        k_max=config.DEFAULT_K_MAX, exhaustive_limit=config.EXHAUSTIVE_HISTORY_LIMIT,
                        model=None):
    """Expected optimal gain per interval over random source histories.

    Entry j - 1 of the returned per-interval schedule is k_bar[j + 1], averaged over the
    histories W(1..j-1). Histories of length <= exhaustive_limit are enumerated and weighted
    by their probability; longer ones are sampled (n_samples i.i.d. sequences whose prefixes
    serve every interval). Degenerate histories (B0 = 0) are left out of each average.
    """
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    first_hop, second_hop = hops
    if model is None:
        model = GainModel(source, det.xi_d, first_hop, second_hop, scheme, k_max)
    seq_len = source.seq_len
    p1, p0 = source.p1, source.p0

    gains = np.empty(seq_len)
    degenerate = np.zeros(seq_len, dtype=bool)
    sampled = None
    for j in range(1, seq_len + 1):
        h = j - 1
        if h <= exhaustive_limit:
            histories = _all_histories(h)
            ones = histories.sum(axis=1)
            weights = np.power(p1, ones) * np.power(p0, h - ones)
        else:
            if sampled is None:
                stream = rng.make_stream(seed, rng.TAG_GAIN_SCHEDULE)
                sampled = (stream.random((n_samples, seq_len - 1)) < p1).astype(float)
            histories = sampled[:, :h]
            weights = np.ones(n_samples)

        k, is_degenerate = model.optimal_gains(histories)
        keep = ~is_degenerate & (weights > 0)
        total = weights[keep].sum()
        if total <= 0:
            logger.warning("All histories of length %d are degenerate (B0 = 0); k[%d] clamped to k_max = %d",
                           h, j + 1, k_max)
            gains[j - 1] = k_max
            degenerate[j - 1] = True
        else:
            gains[j - 1] = round_half_away(np.dot(weights[keep], k[keep]) / total)

    logger.debug("Type-2 schedule: %s", gains)
    return AmplificationSchedule.per_interval(gains, k_max, degenerate)


def fixed_gain(source, det, hops, scheme, n_samples, seed, k_max=config.DEFAULT_K_MAX, model=None):
    """Single gain for every interval: the mean of the non-degenerate Type-2 schedule entries."""
    schedule = type2_gain_schedule(source, det, hops, scheme, n_samples, seed, k_max, model=model)
    values = np.asarray(schedule.gains)[~np.asarray(schedule.degenerate, dtype=bool)]
    if values.size == 0:
        logger.warning("Every schedule entry is degenerate; fixed gain clamped to k_max = %d", k_max)
        return int(k_max)
    return int(round_half_away(values.mean()))


def default_relay_threshold(system_config):
    """xi_R heuristic: xi_D scaled by (first-hop single-bit mean) / (second-hop single-bit mean).

    The second-hop mean is what the destination sees when the relay forwards one bit-1
    observation: df_emission molecules for DF, k_ref times the first-hop mean for AF, where
    k_ref is the configured gain or else the optimal gain after a single preceding 1.
    """
    cfg = system_config
    scheme = cfg.scheme
    first_now = hit_sums(cfg.first_hop, scheme, 1)[0]
    second_now = hit_sums(cfg.second_hop, scheme, 1)[0]
    first_mean = cfg.n_a1 * first_now

    if cfg.protocol == Variant.DECODE_FORWARD.value:
        emitted = cfg.relay_emission
    else:
        if cfg.gain is not None:
            k_ref = cfg.gain
        elif cfg.xi_d >= 2 and 0 < cfg.p1 < 1 and cfg.n_a1 > 0:
            k_ref = GainModel.from_config(cfg).optimal_gain([1])
        else:
            k_ref = 1.0
        emitted = k_ref * first_mean

    second_mean = emitted * second_now
    if first_mean <= 0 or second_mean <= 0:
        return max(1, int(cfg.xi_d))
    return max(1, int(round_half_away(cfg.xi_d * first_mean / second_mean)))


def check_schedule(protocol, schedule):
    """Raises ConfigError when the schedule is not the kind the protocol consumes."""
    wanted = protocol.schedule_mode
    if wanted is None:
        return
    if schedule is None or schedule.mode != wanted:
        got = None if schedule is None else schedule.mode
        raise ConfigError(f"{protocol.ui_name} needs a '{wanted}' amplification schedule, got {got}")


def build_schedule(protocol, system_config, n_samples=config.DEFAULT_GAIN_SAMPLES, seed=config.DEFAULT_SEED,
                   model=None):
    """The amplification schedule a protocol runs with (None for DF and the baseline)."""
    cfg = system_config
    mode = protocol.schedule_mode
    if mode is None:
        return None
    if model is None:
        model = GainModel.from_config(cfg)
    hops = (cfg.first_hop, cfg.second_hop)
    det = cfg.detection
    if mode == "fixed":
        k = cfg.gain
        if k is None:
            k = fixed_gain(cfg.source_model, det, hops, cfg.scheme, n_samples, seed, cfg.k_max, model=model)
            logger.info("Fixed gain from averaged optimal gains: k = %d", k)
        return AmplificationSchedule.fixed(k, cfg.k_max)
    if mode == "per_interval":
        return type2_gain_schedule(cfg.source_model, det, hops, cfg.scheme, n_samples, seed, cfg.k_max, model=model)
    return AmplificationSchedule.online(model.optimal_gain, cfg.k_max)


def relay_step(protocol, schedule, observed_prev, estimated_history, j, relay_threshold=None):
    """Molecules the relay releases at the start of interval j.

    observed_prev is the relay's weighted sum from interval j - 1. estimated_history holds
    the relay's own decisions; only the bits before the forwarded one (1..j-2) are used.
    """
    if not protocol.has_relay:
        raise InvalidProtocolError(f"{protocol.ui_name} has no relay")
    if observed_prev < 0:
        raise DomainError(f"observed count must be >= 0, got {observed_prev}")
    check_schedule(protocol, schedule)
    if j < 2:
        return 0

    if protocol.variant == Variant.DECODE_FORWARD:
        if relay_threshold is None:
            raise ConfigError("DF relaying needs the relay threshold", field="xi_r")
        return protocol.df_emission if detect(observed_prev, relay_threshold) else 0

    history = tuple(getattr(estimated_history, "bits", estimated_history))[:max(j - 2, 0)]
    k = schedule.gain_for(j, history)
    return relay_emission_count(k, observed_prev)
