"""Named RNG substreams derived from a single master seed.

Every random draw in the package flows from one master seed through
deterministic, named substreams, so that experiments are reproducible and
adding a consumer (e.g. a new benchmark method) never perturbs the streams
of existing ones.
"""

from __future__ import annotations

import numpy as np

# Top-level stream labels.  Each consumer owns one label and appends its own
# integer indices (dataset size, method index, trial index, ...).
STREAM_DATASET = 0
STREAM_XREF = 1
STREAM_EPISODE = 2
STREAM_SEARCH = 3


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the substream identified by ``key``.

    Streams with different keys are statistically independent; the same
    (master_seed, key) pair always yields the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def substream_seed(master_seed: int, *key: int) -> int:
    """Derive a plain integer seed from a named substream.

    Useful where an API takes a scalar seed (e.g. a search configuration)
    rather than a generator.
    """
    return int(substream(master_seed, *key).integers(0, 2**63 - 1))
