"""Counter-based splittable random streams.

Every sampler derives its generator from ``stream(seed, *key)`` where the key
encodes (chain id, sample index, ...).  Streams are statistically independent
and reproducible regardless of execution order, so parallel Monte Carlo gives
bit-identical results to a serial run.
"""

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for the given (seed, key...) tuple."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
