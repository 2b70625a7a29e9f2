"""Reproducible random streams.

Every stream is a Philox (counter-based) generator keyed by the triple
``(master seed, module tag, replicate index)``. Streams never depend on
the order in which replicates are executed, so results are identical for
any thread count.
"""

import zlib

import numpy as np

__all__ = ["stream", "tag_id"]


def tag_id(tag):
    """Stable 32-bit integer for a module tag string."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed, replicate=0, tag="default"):
    """Return the generator for one replicate of one module.

    Parameters
    ----------
    seed : int
        Master seed of the experiment.
    replicate : int
        Replicate index.
    tag : str
        Name of the consuming module or sub-experiment.

    Returns
    -------
    numpy.random.Generator
        A Philox-backed generator.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag_id(tag), int(replicate)))
    return np.random.Generator(np.random.Philox(ss))
