# Diffusion channel: point-source concentration, passive-observer hit probability,
# cumulative observation means and Poisson tails.
#
# All quantities are SI (m, s, m^2/s). Functions accept scalar or numpy-array times and
# return a float for scalar input.

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc, gammaln, logsumexp

from src.errors import DomainError, ModelValidityError

logger = logging.getLogger(__name__)

# An observer closer than this many radii to the emitter is flagged in the log.
NEAR_FIELD_RADII = 3.0
# Relative slack when checking that all samples fit inside the bit interval.
_SCHEME_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiffusionMedium:
    diffusion_coeff_a1: float
    diffusion_coeff_a2: float

    def __post_init__(self):
        for name in ("diffusion_coeff_a1", "diffusion_coeff_a2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class NodeGeometry:
    """A spherical passive observer (radius 0 is a point)."""
    center: tuple
    radius: float
    volume: float = field(init=False)

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if len(center) != 3:
            raise DomainError(f"node center must be a 3-vector, got {self.center}")
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise DomainError(f"node radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "volume", 4.0 / 3.0 * math.pi * self.radius ** 3)


@dataclass(frozen=True)
class LinkGeometry:
    """One hop: an impulsive point emitter and the observer that counts its molecules."""
    emitter_pos: tuple
    observer: NodeGeometry
    diffusion_coeff: float
    distance: float = field(init=False)

    def __post_init__(self):
        emitter = tuple(float(c) for c in self.emitter_pos)
        if len(emitter) != 3:
            raise DomainError(f"emitter position must be a 3-vector, got {self.emitter_pos}")
        if not (math.isfinite(self.diffusion_coeff) and self.diffusion_coeff > 0):
            raise DomainError(f"diffusion coefficient must be positive, got {self.diffusion_coeff}")
        object.__setattr__(self, "emitter_pos", emitter)
        distance = math.dist(self.observer.center, emitter)
        object.__setattr__(self, "distance", distance)

        if distance <= self.observer.radius:
            raise ModelValidityError(
                f"emitter lies inside the observer (distance {distance:.3e} m, radius {self.observer.radius:.3e} m)")
        if distance < NEAR_FIELD_RADII * self.observer.radius:
            logger.warning("Observer at %.3e m is within %.0f radii of the emitter; "
                           "uniform-concentration model is inaccurate.", distance, NEAR_FIELD_RADII)


@dataclass(frozen=True)
class SamplingScheme:
    bit_interval: float
    samples_per_bit: int
    sample_spacing: float

    def __post_init__(self):
        if int(self.samples_per_bit) != self.samples_per_bit or self.samples_per_bit < 1:
            raise DomainError(f"samples_per_bit must be a positive integer, got {self.samples_per_bit}")
        if not self.sample_spacing > 0:
            raise DomainError(f"sample_spacing must be > 0, got {self.sample_spacing}")
        last_sample = self.samples_per_bit * self.sample_spacing
        if last_sample > self.bit_interval * (1.0 + _SCHEME_TOLERANCE):
            raise DomainError(f"{self.samples_per_bit} samples spaced {self.sample_spacing:.3e} s "
                              f"do not fit in a bit interval of {self.bit_interval:.3e} s")

    @property
    def sample_times(self):
        """t_m = m * t0 for m = 1..M, relative to the start of a bit interval."""
        return np.arange(1, self.samples_per_bit + 1) * self.sample_spacing


def _as_times(t):
    times = np.asarray(t, dtype=float)
    if np.any(~(times > 0)):
        raise DomainError("observation time must be > 0 (the point-source solution is singular at t = 0)")
    return times


def _unwrap(values, like):
    return float(values) if np.ndim(like) == 0 else values


def _green(link, times):
    four_dt = 4.0 * link.diffusion_coeff * times
    return np.exp(-link.distance ** 2 / four_dt) / (math.pi * four_dt) ** 1.5


def point_concentration(n_molecules, link, t):
    """Expected concentration (molecule/m^3) at the observer center t seconds after an impulsive emission."""
    if n_molecules < 0:
        raise DomainError(f"n_molecules must be >= 0, got {n_molecules}")
    times = _as_times(t)
    return _unwrap(n_molecules * _green(link, times), t)


def hit_probability(link, t):
    """Probability that one emitted molecule lies inside the observer sphere at time t."""
    times = _as_times(t)
    probability = link.observer.volume * _green(link, times)
    if np.any(probability > 1.0):
        raise ModelValidityError(
            f"hit probability exceeds 1 (max {np.max(probability):.4f}); the observer is too close "
            f"to the emitter for the uniform-concentration model")
    return _unwrap(probability, t)


def peak_time(link):
    """Time at which the hit probability is maximal: d^2 / (6 D)."""
    return link.distance ** 2 / (6.0 * link.diffusion_coeff)


def hit_sums(link, scheme, n_delays):
    """sums[d] = sum_m P_ob(d*T + t_m) for d = 0..n_delays-1."""
    delays = np.arange(n_delays, dtype=float)[:, None] * scheme.bit_interval
    times = delays + scheme.sample_times[None, :]
    return np.asarray(hit_probability(link, times)).sum(axis=1)


def cumulative_mean(link, scheme, emissions, j):
    """Mean weighted sum observed in interval j given emissions N[1..j] at interval starts."""
    if j < 1:
        raise DomainError(f"interval index must be >= 1, got {j}")
    emissions = np.asarray(emissions, dtype=float)
    if emissions.shape[0] < j:
        raise DomainError(f"need {j} emission counts, got {emissions.shape[0]}")
    if np.any(emissions[:j] < 0):
        raise DomainError("emission counts must be >= 0")
    sums = hit_sums(link, scheme, j)
    return float(np.dot(emissions[:j], sums[::-1]))


def _check_tail_args(threshold, mean):
    if int(threshold) != threshold or threshold < 0:
        raise DomainError(f"threshold must be a nonnegative integer, got {threshold}")
    lam = np.asarray(mean, dtype=float)
    if np.any(~np.isfinite(lam)) or np.any(lam < 0):
        raise DomainError("Poisson mean must be finite and >= 0")
    return int(threshold), lam


def poisson_tail_below(threshold, mean):
    """P(N < threshold) for N ~ Poisson(mean), summed in the log domain.

    Accepts a scalar or an array of means. threshold = 0 gives 0 (empty sum).
    """
    xi, lam = _check_tail_args(threshold, mean)
    if xi == 0:
        return _unwrap(np.zeros_like(lam), mean)

    flat = np.atleast_1d(lam).ravel()
    result = np.ones_like(flat)
    positive = flat > 0
    if np.any(positive):
        omega = np.arange(xi, dtype=float)
        log_terms = omega[None, :] * np.log(flat[positive])[:, None] - gammaln(omega + 1.0)[None, :]
        result[positive] = np.exp(logsumexp(log_terms, axis=1) - flat[positive])
    result = np.minimum(result, 1.0).reshape(lam.shape)
    return _unwrap(result, mean)


def poisson_tail_gamma(threshold, mean):
    """Continuous relaxation Gamma(xi, mean) / Gamma(xi); equals poisson_tail_below for integer xi."""
    xi, lam = _check_tail_args(threshold, mean)
    if xi < 1:
        raise DomainError("the regularized incomplete Gamma form needs threshold >= 1")
    return _unwrap(gammaincc(xi, lam), mean)
