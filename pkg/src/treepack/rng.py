"""Seeded RNG streams.

One root seed per run; every stage derives its own independent stream from
(seed, stage-name hash), so changing how one stage consumes randomness does
not perturb any other stage.  All randomness in the package flows through
numpy Generators passed explicitly as arguments.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named stage under the given root seed."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(tag,)))


def kernel_seed(rng: np.random.Generator) -> int:
    """Draw a 32-bit seed to hand to a compiled kernel."""
    return int(rng.integers(0, 2**31 - 1))
