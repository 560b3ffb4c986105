# Seed-derived random streams
#
# Every consumer of randomness asks for its own stream keyed by (seed, tag, index...).
# Streams built from distinct keys are statistically independent, so results do not
# depend on the order or the process in which work items are evaluated.

import numpy as np

# Stream tags. Keep the values stable: changing one changes every seeded result.
TAG_TRIAL = 1
TAG_GAIN_SCHEDULE = 2
TAG_SEQUENCE = 3
TAG_REALIZATION = 4
TAG_SINGLE_EMISSION = 5
TAG_BIT_ERROR = 6


def make_stream(seed, *keys):
    """Returns an independent numpy Generator for the key path (seed, *keys)."""
    if seed is None:
        raise ValueError("a seed is required for reproducible streams")
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(v < 0 for v in entropy):
        raise ValueError(f"seed and stream keys must be nonnegative, got {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(seed_or_rng, *keys):
    """Accepts either an existing Generator (returned unchanged) or a seed."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_stream(seed_or_rng, *keys)
