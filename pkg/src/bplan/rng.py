"""Seeded Mersenne-Twister generators.

Every random draw in the package goes through :func:`make_rng` so that a
``(seed, *stream)`` tuple fully determines a sequence.
"""
import numpy as np


def make_rng(seed, *stream):
    """Return a ``numpy.random.Generator`` backed by MT19937.

    ``stream`` carries extra integers (problem index, retry count, ...) that
    are mixed into the seed so child streams never overlap.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) & 0xFFFFFFFFFFFFFFFF for s in stream]
    return np.random.Generator(np.random.MT19937(np.random.SeedSequence(entropy)))


def child_seed(seed, *stream):
    """Derive a 64-bit seed from a parent seed and stream indices."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
