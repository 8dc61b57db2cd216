"""Shared helpers: named random substreams and deterministic file writing."""
import zlib

import numpy as np

__all__ = ["substream", "SPEED_OF_LIGHT_KM_S"]

SPEED_OF_LIGHT_KM_S = 299792.458


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible random stream derived from (seed, name).

    Every source of randomness in the pipeline draws from a named substream
    so that components can be re-run or parallelized without perturbing each
    other's draws.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))
