# Particle-based Monte Carlo simulation of the two-hop link
#
# Every emitted molecule is tracked individually. Time advances in steps of t0 between the
# M sampling instants of an interval and then jumps to the interval end; Brownian
# increments compose exactly, so the jump needs no sub-stepping.

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.stats import binomtest
from tqdm import tqdm

from src import config
from src import rng
from src.channel import LinkGeometry, NodeGeometry, hit_probability
from src.errors import DomainError, InvalidProtocolError, RelaySimError
from src.nodes import build_nodes
from src.protocols import ProtocolKind, build_schedule, check_schedule

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("trial", "interval", "source_bit", "relay_sum", "relay_estimate", "relay_emission",
                 "destination_sum", "decided_bit_index", "decision")


@dataclasses.dataclass(frozen=True)
class Particle:
    position: tuple
    species: str
    birth_time: float


def brownian_step(position, dt, diffusion_coeff, rng_stream):
    """Adds an independent N(0, 2 D dt) increment to every coordinate."""
    if not dt > 0:
        raise DomainError(f"time step must be > 0, got {dt}")
    if not diffusion_coeff > 0:
        raise DomainError(f"diffusion coefficient must be > 0, got {diffusion_coeff}")
    position = np.asarray(position, dtype=float)
    return position + rng_stream.normal(0.0, math.sqrt(2.0 * diffusion_coeff * dt), size=position.shape)


class ParticleEnsemble:
    """Positions and birth times of every live molecule, one array per species."""

    def __init__(self):
        self.positions = {s: np.empty((0, 3)) for s in config.SPECIES}
        self.birth_times = {s: np.empty(0) for s in config.SPECIES}
        self.emitted = {s: 0 for s in config.SPECIES}
        self.culled = {s: 0 for s in config.SPECIES}

    def add(self, species, center, count, time):
        if count < 0:
            raise DomainError(f"cannot emit {count} molecules")
        new = np.tile(np.asarray(center, dtype=float), (count, 1))
        self.positions[species] = np.concatenate([self.positions[species], new])
        self.birth_times[species] = np.concatenate([self.birth_times[species], np.full(count, time)])
        self.emitted[species] += count

    def step(self, dt, diffusion, generator):
        """Moves every molecule; diffusion maps species to its coefficient."""
        for species in config.SPECIES:
            if self.positions[species].shape[0]:
                self.positions[species] = brownian_step(self.positions[species], dt, diffusion[species], generator)

    def count_inside(self, node, species):
        """Molecules of one species in the closed ball of the node."""
        offsets = self.positions[species] - np.asarray(node.center)
        return int(np.count_nonzero(np.einsum("ij,ij->i", offsets, offsets) <= node.radius ** 2))

    def cull(self, born_before):
        """Drops molecules emitted before the given time; returns how many were dropped."""
        dropped = 0
        for species in config.SPECIES:
            keep = self.birth_times[species] >= born_before
            n_dropped = int(keep.size - np.count_nonzero(keep))
            if n_dropped:
                self.positions[species] = self.positions[species][keep]
                self.birth_times[species] = self.birth_times[species][keep]
                self.culled[species] += n_dropped
                dropped += n_dropped
        return dropped

    def alive(self, species):
        return self.positions[species].shape[0]

    def check_conservation(self):
        for species in config.SPECIES:
            if self.alive(species) + self.culled[species] != self.emitted[species]:
                raise RelaySimError(f"particle count mismatch for {species}: {self.alive(species)} alive, "
                                    f"{self.culled[species]} culled, {self.emitted[species]} emitted")

    def particles(self, species=None):
        """Snapshot as Particle records (slow; for inspection and tests)."""
        kinds = config.SPECIES if species is None else (species,)
        return [Particle(tuple(p), s, float(t))
                for s in kinds for p, t in zip(self.positions[s], self.birth_times[s])]


def count_inside_sphere(particles, node, species):
    """Molecules of one species within distance node.radius of node.center (boundary included)."""
    if isinstance(particles, ParticleEnsemble):
        return particles.count_inside(node, species)
    radius_sq = node.radius ** 2
    return sum(1 for p in particles if p.species == species and math.dist(p.position, node.center) ** 2 <= radius_sq)


@dataclasses.dataclass(frozen=True)
class TrialResult:
    source_bits: tuple
    destination_decisions: tuple
    relay_estimates: tuple = None
    relay_emissions: tuple = ()     # N_A2[j] for j = 1..L+1
    relay_sums: tuple = ()
    destination_sums: tuple = ()
    molecules_emitted: tuple = ()   # (A1, A2)
    molecules_culled: tuple = ()

    @property
    def errors(self):
        return sum(1 for sent, got in zip(self.source_bits, self.destination_decisions) if sent != got)

    @property
    def has_relay(self):
        return self.relay_estimates is not None

    def trace_rows(self, trial):
        """One row per interval: observed sums, relay behaviour and the decision taken at its end."""
        rows = []
        n_bits = len(self.source_bits)
        for j in range(1, len(self.destination_sums) + 1):
            decided = j - 1 if self.has_relay else j
            decision = self.destination_decisions[decided - 1] if 1 <= decided <= n_bits else ""
            rows.append((
                trial, j,
                self.source_bits[j - 1] if j <= n_bits else "",
                self.relay_sums[j - 1] if self.has_relay else "",
                self.relay_estimates[j - 1] if self.has_relay else "",
                self.relay_emissions[j - 1] if self.has_relay else "",
                self.destination_sums[j - 1],
                decided if 1 <= decided <= n_bits else "",
                decision,
            ))
        return rows


@dataclasses.dataclass(frozen=True)
class BerEstimate:
    errors: int
    bits: int
    ber: float
    ci95: float
    seed: int
    trials: int
    mean_relay_emission: float = 0.0
    trace: tuple = ()

    @classmethod
    def from_counts(cls, errors, bits, seed, trials, mean_relay_emission=0.0, trace=()):
        if bits < 1:
            raise DomainError("need at least one decided bit")
        low, high = binomtest(errors, bits).proportion_ci(confidence_level=0.95, method="wilson")
        return cls(errors, bits, errors / bits, (high - low) / 2.0, seed, trials, mean_relay_emission, tuple(trace))

    @property
    def ci_bounds(self):
        return self.ber - self.ci95, self.ber + self.ci95


class SimulationState:
    def __init__(self, system_config, protocol, schedule, bits, generator):
        self.config = system_config
        self.protocol = protocol
        self.schedule = schedule
        self.bits = tuple(int(b) for b in bits)
        self.generator = generator

        self.detection = system_config.detection
        self.scheme = system_config.scheme
        self.diffusion = {"A1": system_config.diffusion_a1, "A2": system_config.diffusion_a2}
        self.ensemble = ParticleEnsemble()
        self.nodes = build_nodes(system_config, protocol, config.NODE_TYPES)

        self.time = 0.0     # Seconds since the first emission
        self.interval = 0   # Index of the last interval started (1-based)

    @property
    def n_intervals(self):
        # The relay forwards bit L during interval L + 1
        return len(self.bits) + 1 if self.protocol.has_relay else len(self.bits)

    def advance(self, dt):
        self.ensemble.step(dt, self.diffusion, self.generator)
        self.time += dt

    def tick(self):
        """One sampling step: move every molecule by t0, then let each node observe."""
        self.advance(self.scheme.sample_spacing)
        for node in self.nodes.values():
            node.update(self)

    def run_interval(self):
        self.interval += 1
        j = self.interval
        T = self.scheme.bit_interval
        self.time = (j - 1) * T

        if self.config.culling:
            dropped = self.ensemble.cull(self.time - self.config.cull_horizon_bits * T)
            if dropped:
                logger.debug("Interval %d: culled %d molecules older than %.1f bit intervals",
                             j, dropped, self.config.cull_horizon_bits)

        # Source and relay release concurrently at the interval start
        for node in self.nodes.values():
            if node.emits is not None:
                node.emit(self, j)

        for _ in range(self.scheme.samples_per_bit):
            self.tick()
        remainder = j * T - self.time
        if remainder > 1e-9 * T:
            self.advance(remainder)
        self.time = j * T

        relay = self.nodes.get("RELAY")
        if relay is not None:
            relay.close_interval(self.detection.xi_r)
            # The destination decides bit j - 1 from this interval's samples
            self.nodes["DESTINATION"].close_interval(self.detection.xi_d if j >= 2 else None)
        else:
            self.nodes["DESTINATION"].close_interval(self.detection.xi_d)

    def run(self):
        while self.interval < self.n_intervals:
            self.run_interval()
        self.ensemble.check_conservation()
        return self.result()

    def result(self):
        relay = self.nodes.get("RELAY")
        destination = self.nodes["DESTINATION"]
        return TrialResult(
            source_bits=self.bits,
            destination_decisions=tuple(destination.decisions),
            relay_estimates=tuple(relay.decisions) if relay else None,
            relay_emissions=tuple(relay.emissions) if relay else (),
            relay_sums=tuple(relay.sums) if relay else (),
            destination_sums=tuple(destination.sums),
            molecules_emitted=(self.ensemble.emitted["A1"], self.ensemble.emitted["A2"]),
            molecules_culled=(self.ensemble.culled["A1"], self.ensemble.culled["A2"]),
        )


def _protocol_kind(system_config, protocol):
    if protocol is None:
        return system_config.protocol_kind
    if isinstance(protocol, ProtocolKind):
        return protocol
    return ProtocolKind.from_key(protocol, system_config.relay_emission)


def culling_bound(system_config):
    """Largest per-molecule hit probability neglected by culling at the configured horizon."""
    horizon = system_config.cull_horizon_bits * system_config.bit_interval
    links = [system_config.first_hop, system_config.second_hop, system_config.direct_link]
    return max(hit_probability(link, horizon) for link in links)


def run_trial(system_config, protocol=None, schedule=None, sequence=None, seed=config.DEFAULT_SEED, trial=0):
    """Simulates one transmission of L bits (drawn from the trial stream unless given)."""
    if sequence is not None and len(getattr(sequence, "bits", sequence)) == 0:
        raise DomainError("a trial needs at least one source bit, got an empty sequence")
    protocol = _protocol_kind(system_config, protocol)
    check_schedule(protocol, schedule)
    generator = rng.make_stream(seed, rng.TAG_TRIAL, trial)
    if sequence is None:
        bits = system_config.source_model.draw_bits(generator)
    else:
        bits = np.asarray(getattr(sequence, "bits", sequence), dtype=np.int8)
        if np.any((bits != 0) & (bits != 1)):
            raise DomainError("bit sequences hold only 0 and 1")
    return SimulationState(system_config.replace(seq_len=len(bits)), protocol, schedule, bits, generator).run()


def _chunks(total, workers):
    size = math.ceil(total / max(1, workers))
    return [(start, min(start + size, total)) for start in range(0, total, size)]


def _run_trials(task):
    """Worker body: (errors, bits, relay emission total, forwarding intervals, trace rows)."""
    system_config, protocol, schedule, seed, start, stop, collect_trace, progress = task
    errors = bits = emission_total = forwarding = 0
    rows = []
    for trial in tqdm(range(start, stop), disable=not progress, desc=protocol.ui_name, leave=False):
        result = run_trial(system_config, protocol, schedule, seed=seed, trial=trial)
        errors += result.errors
        bits += len(result.destination_decisions)
        if result.has_relay:
            emission_total += sum(result.relay_emissions[1:])
            forwarding += len(result.relay_emissions) - 1
        if collect_trace:
            rows.extend(result.trace_rows(trial))
    return errors, bits, emission_total, forwarding, rows


def _map_chunks(function, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(function, tasks))
    return [function(task) for task in tasks]


def monte_carlo_ber(system_config, protocol=None, trials=config.DEFAULT_TRIALS, seed=config.DEFAULT_SEED,
                    schedule=None, workers=config.DEFAULT_WORKERS, gain_samples=config.DEFAULT_GAIN_SAMPLES,
                    collect_trace=False, progress=False):
    """Bit error rate over independent trials with fresh random source bits.

    Trial i always uses the stream (seed, trial, i), so the estimate does not depend on workers.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    protocol = _protocol_kind(system_config, protocol)
    cfg = system_config.replace(protocol=protocol.key)
    if schedule is None:
        schedule = build_schedule(protocol, cfg, gain_samples, seed)
    check_schedule(protocol, schedule)
    if cfg.culling:
        logger.info("Culling after %.1f bit intervals neglects hit probabilities below %.3e per molecule",
                    cfg.cull_horizon_bits, culling_bound(cfg))

    tasks = [(cfg, protocol, schedule, seed, start, stop, collect_trace, progress and workers <= 1)
             for start, stop in _chunks(trials, workers)]
    results = _map_chunks(_run_trials, tasks, workers)

    errors = sum(r[0] for r in results)
    bits = sum(r[1] for r in results)
    emission_total = sum(r[2] for r in results)
    forwarding = sum(r[3] for r in results)
    trace = [row for r in results for row in r[4]]
    mean_emission = emission_total / forwarding if forwarding else 0.0
    estimate = BerEstimate.from_counts(errors, bits, seed, trials, mean_emission, trace)
    logger.info("%s: simulated BER %.4e +- %.2e over %d trials (%d bits)",
                protocol.ui_name, estimate.ber, estimate.ci95, trials, bits)
    return estimate


def measure_relay_budget(system_config, protocol=None, trials=config.DEFAULT_TRIALS, seed=config.DEFAULT_SEED,
                         schedule=None, workers=config.DEFAULT_WORKERS, gain_samples=config.DEFAULT_GAIN_SAMPLES):
    """Mean relay emission per forwarded bit over simulated trials."""
    protocol = _protocol_kind(system_config, protocol)
    if not protocol.has_relay:
        raise InvalidProtocolError("the baseline has no relay whose budget could be measured")
    estimate = monte_carlo_ber(system_config, protocol, trials, seed, schedule, workers, gain_samples)
    return estimate.mean_relay_emission


def _run_bit_trials(task):
    system_config, protocol, schedule, seed, prefix, start, stop = task
    errors = 0
    for trial in range(start, stop):
        generator = rng.make_stream(seed, rng.TAG_BIT_ERROR, trial)
        last_bit = int(generator.random() < system_config.p1)
        bits = np.append(prefix, last_bit).astype(np.int8)
        state = SimulationState(system_config, protocol, schedule, bits, generator)
        result = state.run()
        errors += int(result.destination_decisions[-1] != last_bit)
    return errors


def monte_carlo_bit_error(system_config, prefix, trials=config.DEFAULT_TRIALS, seed=config.DEFAULT_SEED,
                          protocol=None, schedule=None, workers=config.DEFAULT_WORKERS,
                          gain_samples=config.DEFAULT_GAIN_SAMPLES):
    """Error rate of the bit that follows a fixed source prefix (the bit itself is random)."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    protocol = _protocol_kind(system_config, protocol)
    prefix = np.asarray(getattr(prefix, "bits", prefix), dtype=np.int8)
    cfg = system_config.replace(protocol=protocol.key, seq_len=len(prefix) + 1)
    if schedule is None:
        schedule = build_schedule(protocol, cfg, gain_samples, seed)
    check_schedule(protocol, schedule)

    tasks = [(cfg, protocol, schedule, seed, prefix, start, stop) for start, stop in _chunks(trials, workers)]
    errors = sum(_map_chunks(_run_bit_trials, tasks, workers))
    return BerEstimate.from_counts(errors, trials, seed, trials)


def single_emission_counts(distance, times, n_molecules, trials, seed, radius=config.DEFAULT_RELAY_RADIUS,
                           diffusion_coeff=config.DEFAULT_DIFFUSION_COEFF):
    """Molecules inside an observer at `distance` at each of `times` after one impulsive emission.

    Returns an array of shape (trials, len(times)).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise DomainError("observation times must be positive and strictly increasing")
    observer = NodeGeometry((distance, 0.0, 0.0), radius)
    LinkGeometry((0.0, 0.0, 0.0), observer, diffusion_coeff)  # validates the geometry

    counts = np.empty((trials, times.shape[0]), dtype=np.int64)
    for trial in range(trials):
        generator = rng.make_stream(seed, rng.TAG_SINGLE_EMISSION, trial)
        ensemble = ParticleEnsemble()
        ensemble.add("A1", (0.0, 0.0, 0.0), n_molecules, 0.0)
        now = 0.0
        for k, t in enumerate(times):
            ensemble.step(t - now, {"A1": diffusion_coeff, "A2": diffusion_coeff}, generator)
            now = t
            counts[trial, k] = ensemble.count_inside(observer, "A1")
    return counts
