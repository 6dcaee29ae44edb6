import zlib

import numpy as np


def sub_seed(seed: int, name: str, *extra: int) -> int:
    """Derive an independent, stable seed for a named component."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *map(int, extra)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
