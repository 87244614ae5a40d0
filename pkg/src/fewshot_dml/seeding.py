"""Deterministic random-stream derivation.

Every command takes one integer seed.  Sub-components never share a
generator; each derives its own stream as

    rng = substream(seed, STREAM_X, index...)

which maps to ``numpy.random.SeedSequence(seed, spawn_key=(STREAM_X, ...))``,
a counter-based derivation: streams are independent, reproducible, and
insensitive to the order in which sibling streams are created or consumed.

Stream ids used across the package (keep this table in sync):

    0  network initialization
    1  data shuffling / batch sampling (real or primary source)
    2  data shuffling / batch sampling (auxiliary source)
    3  GAN noise draws
    4  GAN interpolation coefficients
    5  k-shot sampling
    6  dataset splitting
    7  synthetic benchmark generation
    8  feature synthesis noise
    9  second-stage (warm-started) training
"""

import numpy as np

STREAM_INIT = 0
STREAM_BATCH = 1
STREAM_AUX_BATCH = 2
STREAM_NOISE = 3
STREAM_INTERP = 4
STREAM_KSHOT = 5
STREAM_SPLIT = 6
STREAM_SYNTH = 7
STREAM_SYNTH_NOISE = 8
STREAM_STAGE2 = 9


def substream(seed, *path):
    """Return an independent ``numpy.random.Generator`` for (seed, path)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path)))
