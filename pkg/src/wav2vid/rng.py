"""Deterministic RNG construction via seed-sequence splitting.

Every stochastic component derives its generator from (base seed, integer
key path) so reruns with the same seed are bitwise identical and streams
never collide across components.
"""

import numpy as np

# fixed component tags for seed splitting
TAG_SCENE = 1
TAG_CHANNEL = 2
TAG_INIT = 3
TAG_TRAIN = 4
TAG_SWEEP = 5
TAG_COMPARE = 6
TAG_PIPELINE = 7


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
