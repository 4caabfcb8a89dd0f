"""Deterministic random-stream derivation.

Every random draw in the package comes from a generator derived from a
master seed plus a structured path (purpose id, step index, image index,
...). Streams are independent of call order, so step k of a training run
draws the same numbers whether the run was interrupted and resumed or ran
straight through.
"""

import numpy as np

# Purpose ids for the per-step training streams.
IMAGE_PICK = 1
CROP = 2
NOISE = 3
MASK = 4
EVAL_NOISE = 5
INIT = 6
SPLIT = 7


def stream(master_seed: int, *path: int) -> np.random.Generator:
    """Return a fresh generator for (master_seed, path).

    The same arguments always yield an identical stream; distinct paths
    yield statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))
