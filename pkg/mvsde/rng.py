"""
Counter-based random streams.

Every stochastic quantity draws from a Philox generator keyed by an explicit
seed plus a spawn key (purpose, index, level). The same key always yields the
same stream no matter which worker asks for it or in which order.
"""
import numpy as np

NOISE = 0
INITIAL = 1
BRIDGE = 2
PARTICLE_NOISE = 3
PARTICLE_INITIAL = 4


def stream(seed, purpose, *indices):
    if seed is None or int(seed) < 0:
        raise ValueError('seeds must be non-negative integers')
    key = (int(purpose),) + tuple(int(i) for i in indices)
    sequence = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(sequence))
