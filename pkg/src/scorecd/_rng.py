import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, reproducible sub-generator derived from a single user seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
