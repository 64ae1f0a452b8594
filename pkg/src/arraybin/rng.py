import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for stream ``keys`` of ``seed``.

    Streams with different keys are independent, so scene ``k`` can be
    regenerated without replaying scenes ``0..k-1``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
